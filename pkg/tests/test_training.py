import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import agent_spans_oracle
from sft_fixtures import FIXTURES, Q
from vragloop.context import PromptTemplateSet
from vragloop.grammar import Answer, Search, parse_response
from vragloop.training import (
    AlreadyAugmented,
    AugmentError,
    EmptyTranscript,
    NoUnseenPageAvailable,
    Segment,
    SpanKind,
    is_augmented,
    pick_verification_page,
    rl_mask_spans,
    sft_augment,
    sft_filter,
    transcript_segments,
)
from vragloop.trajectory import PageRef, Status


@pytest.mark.parametrize("name, build, expected", FIXTURES, ids=[f[0] for f in FIXTURES])
def test_filter_fixtures(name, build, expected):
    traj = build()
    verdict = sft_filter(traj, traj.query.reference_pages, traj.query.reference_answer)
    assert verdict.rejections == expected
    assert verdict == sft_filter(traj, traj.query.reference_pages, traj.query.reference_answer)


def augmented(build=FIXTURES[0][1]):
    return sft_augment(build(), "The new page agrees: 50 centers.", PageRef("d1_p7", 1000, 1000))


def test_augment_anchors_queries_to_question():
    traj = augmented(FIXTURES[2][1])
    queries = [t.action.query for t in traj.turns if isinstance(t.action, Search)]
    assert queries == [traj.query.text] * 3


def test_augment_appends_verification_round():
    before = FIXTURES[0][1]()
    traj = augmented()
    assert len(traj.turns) == len(before.turns) + 1
    verify, final = traj.turns[-2], traj.turns[-1]
    assert isinstance(verify.action, Search)
    assert verify.observation.page.page_id == "d1_p7"
    assert "verification step" in verify.observation.prompt_text
    assert final.action == Answer("50")
    assert final.response.think == "The new page agrees: 50 centers."
    assert traj.final_answer == before.final_answer
    assert traj.retrieved_page_ids == ["d1_p2", "d1_p7"]
    assert traj.status is Status.ANSWERED
    assert traj.evidence.entries["d1_p7"].pre == "The new page agrees: 50 centers."


def test_augment_output_reparses():
    for _, build, expected in FIXTURES:
        if expected:
            continue
        traj = augmented(build)
        for turn in traj.turns:
            if turn.response.valid:
                out = parse_response(turn.response.raw_text)
                assert out.ok and out.response == turn.response


def test_augment_twice():
    with pytest.raises(AlreadyAugmented):
        sft_augment(augmented(), "again", PageRef("d1_p8", 1000, 1000))
    assert is_augmented(augmented())
    assert not is_augmented(FIXTURES[0][1]())


def test_augment_rejects_seen_page_and_non_answer():
    with pytest.raises(NoUnseenPageAvailable):
        sft_augment(FIXTURES[0][1](), "r", PageRef("d1_p2", 1000, 1000))
    from helpers import TrajBuilder

    with pytest.raises(AugmentError):
        sft_augment(TrajBuilder(Q).search("d1_p2").traj, "r", PageRef("d1_p7", 1000, 1000))


def test_pick_verification_page_same_document():
    traj = FIXTURES[0][1]()
    pages = [PageRef(p, 10, 10) for p in ("d1_p1", "d1_p2", "d1_p3", "d2_p1")]
    doc = {"d1_p1": "d1", "d1_p2": "d1", "d1_p3": "d1", "d2_p1": "d2"}
    picks = {pick_verification_page(traj, pages, doc, random.Random(s)).page_id for s in range(20)}
    assert picks == {"d1_p1", "d1_p3"}
    with pytest.raises(NoUnseenPageAvailable):
        pick_verification_page(traj, pages[1:2], doc, random.Random(0))


def test_mask_example():
    segs = [Segment("system", 10), Segment("user", 5), Segment("agent", 20), Segment("observation", 100), Segment("agent", 15)]
    spans = rl_mask_spans(segs)
    assert [(s.start, s.end) for s in spans if s.kind is SpanKind.AGENT] == [(15, 35), (135, 150)]


def test_mask_single_agent():
    spans = rl_mask_spans([Segment("agent", 7)])
    assert [(s.start, s.end, s.kind) for s in spans] == [(0, 7, SpanKind.AGENT)]


def test_mask_no_agent():
    spans = rl_mask_spans([Segment("system", 3), Segment("user", 4)])
    assert [(s.start, s.end, s.kind) for s in spans] == [(0, 7, SpanKind.OBSERVATION)]


def test_mask_errors():
    with pytest.raises(EmptyTranscript):
        rl_mask_spans([])
    with pytest.raises(ValueError):
        Segment("agent", 0)
    with pytest.raises(ValueError):
        Segment("tool", 3)


def test_transcript_segments_cover_the_full_trajectory():
    traj = FIXTURES[1][1]()
    segs = transcript_segments(traj, PromptTemplateSet.load(), lambda s: len(s.split()), image_tokens=64)
    roles = [s.role for s in segs]
    assert roles[:2] == ["system", "user"]
    assert roles.count("agent") == len(traj.turns)
    assert roles.count("observation") == sum(1 for t in traj.turns if t.observation is not None)


_segments = st.lists(st.tuples(st.sampled_from(["system", "user", "agent", "observation"]), st.integers(1, 500)),
                     min_size=1, max_size=30)


@given(_segments)
@settings(max_examples=300)
def test_spans_cover_and_align(segs):
    spans = rl_mask_spans([Segment(r, n) for r, n in segs])
    assert spans[0].start == 0 and spans[-1].end == sum(n for _, n in segs)
    for a, b in zip(spans, spans[1:]):
        assert a.end == b.start and a.kind is not b.kind
    assert [(s.start, s.end) for s in spans if s.kind is SpanKind.AGENT] == agent_spans_oracle(segs)
