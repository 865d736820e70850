from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import TrajBuilder, random_trajectory
from vragloop.context import (
    EMPTY_EVIDENCE,
    PENDING_SUMMARY,
    PromptTemplateSet,
    UnknownTemplatePlaceholder,
    build_context,
    render_evidence,
    render_observation_prompt,
    render_verification_hint,
)
from vragloop.trajectory import EvidenceEntry, EvidenceSpace, Observation, ObservationKind, Query

Q = Query("q1", "Which city hosts the company that operated 50 fulfillment centers?")


def five_turns():
    return (TrajBuilder(Q).search("p1", "a").search("p2", "b").crop(think="c")
            .search("p3", "d").search("p4", "e").traj)


def test_window_keeps_last_turns():
    traj = five_turns()
    ctx = build_context(traj, PromptTemplateSet.load(), window=2)
    assert [r for r, _ in ctx.recent_turns] == [t.response for t in traj.turns[3:]]
    evidence_text = ctx.pinned[2].text
    for pid in ("p1", "p2", "p3", "p4"):
        assert f"[{pid}]" in evidence_text
    assert ctx.turn == 6


def test_short_trajectory_keeps_everything(templates):
    traj = TrajBuilder(Q).search("p1").traj
    ctx = build_context(traj, templates, window=2)
    assert len(ctx.recent_turns) == 1


def test_ten_turns_window_three(templates):
    b = TrajBuilder(Q)
    for i in range(1, 11):
        b.search(f"p{i}", f"t{i}")
    ctx = build_context(b.traj, templates, window=3)
    assert ctx.image_count() <= 3
    for i in range(1, 11):
        assert f"[p{i}]" in ctx.pinned[2].text


def test_unsummarized_page_is_listed_as_pending(templates):
    traj = TrajBuilder(Q).search("p1", "t").traj
    ctx = build_context(traj, templates, window=2)
    assert f"[p1]\ninitial: {PENDING_SUMMARY}" in ctx.pinned[2].text


def test_retrieved_prompt_has_question_and_crop_reminder(templates):
    text = render_observation_prompt(ObservationKind.RETRIEVED_PAGE, Q, EvidenceSpace(), templates)
    assert Q.text in text
    assert "only if critical details are visually unclear" in text


def test_crop_prompt_constrains_next_action(templates):
    text = render_observation_prompt(ObservationKind.CROP_RESULT, Q, EvidenceSpace(), templates)
    assert Q.text in text
    assert "must be <search> or <answer>" in text
    assert "previous <think>" in text


@pytest.mark.parametrize("kind", [ObservationKind.NO_NEW_PAGES, ObservationKind.FORCED_ANSWER])
def test_final_prompts_embed_evidence(templates, kind):
    ev = EvidenceSpace({"p7": EvidenceEntry("revenue 4.2B", "Q3 = 27")})
    text = render_observation_prompt(kind, Q, ev, templates, turn=10)
    assert Q.text in text
    assert render_evidence(ev) in text
    assert "<answer>" in text


def test_verification_hint(templates):
    ev = EvidenceSpace({"p1": EvidenceEntry("x")})
    hint = render_verification_hint(Q, templates, ev)
    assert "final <answer> immediately" in hint
    assert "directly contradicts" in hint
    assert "[p1]" in hint


def test_verification_hint_empty_evidence(templates):
    hint = render_verification_hint(Q, templates, EvidenceSpace())
    assert f"\n{EMPTY_EVIDENCE}\n" in hint


def test_hint_composition_mentions_question_once(templates):
    hint = render_verification_hint(Q, templates, EvidenceSpace())
    text = render_observation_prompt(ObservationKind.RETRIEVED_PAGE, Q, EvidenceSpace(), templates, hint=hint)
    assert text.count(Q.text) == 1
    assert hint in text


def test_unknown_placeholder_rejected(templates):
    with pytest.raises(UnknownTemplatePlaceholder):
        replace(templates, no_image="{question} {bogus}")


def test_observation_template_must_carry_question(templates):
    with pytest.raises(ValueError):
        replace(templates, no_image="no pages left {evidence}")


def test_template_dir_override(tmp_path):
    (tmp_path / "user.txt").write_text("Q >> {question}\n")
    t = PromptTemplateSet.load(tmp_path)
    assert t.user == "Q >> {question}"
    assert t.system == PromptTemplateSet.load().system


def test_compact_variant_loads():
    t = PromptTemplateSet.load(variant="compact")
    assert t != PromptTemplateSet.load()


def test_window_must_be_positive(templates):
    with pytest.raises(ValueError):
        build_context(five_turns(), templates, window=0)


_ops = st.lists(st.sampled_from(["search", "crop", "invalid", "nonew"]), max_size=50)


@given(_ops, st.integers(1, 8), st.booleans())
@settings(max_examples=200)
def test_bounded_images_and_complete_evidence(ops, window, pending):
    traj = random_trajectory(Q, ops)
    templates = PromptTemplateSet.load()
    obs = Observation(ObservationKind.FORCED_ANSWER, "answer now") if pending else None
    ctx = build_context(traj, templates, window, pending=obs)
    assert ctx.image_count() <= window
    for pid in traj.retrieved_page_ids:
        assert f"[{pid}]" in ctx.pinned[2].text


@given(_ops)
@settings(max_examples=100)
def test_pinned_prefix_is_stable(ops):
    templates = PromptTemplateSet.load()
    traj = random_trajectory(Q, ops)
    first = build_context(random_trajectory(Q, []), templates, 2)
    ctx = build_context(traj, templates, 2)
    assert ctx.pinned[:2] == first.pinned[:2]
    assert ctx.pinned[2].text.startswith("Evidence Space:\n")
    # rebuilding gives the identical context
    assert build_context(traj, templates, 2) == ctx


@given(_ops, st.sampled_from(list(ObservationKind)))
@settings(max_examples=100)
def test_every_observation_restates_question(ops, kind):
    traj = random_trajectory(Q, ops)
    for variant in ("default", "compact"):
        t = PromptTemplateSet.load(variant=variant)
        assert Q.text in render_observation_prompt(kind, Q, traj.evidence, t, reason="X", turn=3)
