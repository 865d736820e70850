"""Per-turn context reconstruction and observation prompt rendering.

The model input at turn t is: the pinned prompt (system, question, evidence
space) followed by only the last ``window`` raw (response, observation)
turns. Images live only inside those recent turns, so the number of
in-context images never exceeds ``window``.
"""

from __future__ import annotations

import string
from collections.abc import Sequence
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

from .grammar import AgentResponse
from .trajectory import EvidenceSpace, Observation, ObservationKind, Query, Trajectory

PLACEHOLDERS = frozenset({"question", "evidence", "turn", "reason"})
ACTION_TAGS = ("<search>", "<bbox>", "<answer>")
EMPTY_EVIDENCE = "none"
PENDING_SUMMARY = "(shown, not yet summarized)"
MAX_WINDOW = 8


class UnknownTemplatePlaceholder(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplateSet:
    system: str
    user: str
    image_observation: str
    crop_evaluation: str
    crop_correction: str
    verification_hint: str
    no_image: str
    forced_answer: str
    invalid_action: str

    def __post_init__(self) -> None:
        for f in fields(self):
            unknown = template_fields(getattr(self, f.name)) - PLACEHOLDERS
            if unknown:
                raise UnknownTemplatePlaceholder(f"template {f.name!r} uses undefined placeholder(s) {sorted(unknown)}")
        missing = [tag for tag in ACTION_TAGS if tag not in self.system]
        if missing:
            raise ValueError(f"system template must mention {missing}")
        # Intent injection: every observation restates the question.
        for name in ("user", "image_observation", "crop_correction", "no_image", "forced_answer", "invalid_action"):
            if "question" not in template_fields(getattr(self, name)):
                raise ValueError(f"template {name!r} must contain {{question}}")

    @classmethod
    def load(cls, template_dir: str | Path | None = None, variant: str = "default") -> PromptTemplateSet:
        """Load templates from ``template_dir``; any missing file falls back to the built-in set."""
        builtin = resources.files("vragloop") / "templates" / variant
        values = {}
        for f in fields(cls):
            path = Path(template_dir) / f"{f.name}.txt" if template_dir is not None else None
            if path is not None and path.is_file():
                text = path.read_text(encoding="utf-8")
            else:
                text = (builtin / f"{f.name}.txt").read_text(encoding="utf-8")
            values[f.name] = text.rstrip("\n")
        return cls(**values)


def template_fields(template: str) -> set[str]:
    return {name for _, name, _, _ in string.Formatter().parse(template) if name is not None}


def fill(template: str, **values: object) -> str:
    names = template_fields(template)
    unknown = names - PLACEHOLDERS
    if unknown:
        raise UnknownTemplatePlaceholder(f"undefined placeholder(s) {sorted(unknown)}")
    return template.format(**{name: values.get(name, "") for name in names})


def render_evidence(evidence: EvidenceSpace, retrieved: Sequence[str] = ()) -> str:
    """Evidence blocks in insertion order; ``retrieved`` pages without a summary yet are listed as pending."""
    blocks = []
    for page_id, entry in evidence.entries.items():
        lines = [f"[{page_id}]", f"initial: {entry.pre}"]
        if entry.post is not None:
            lines.append(f"after crop: {entry.post}")
        blocks.append("\n".join(lines))
    for page_id in retrieved:
        if page_id not in evidence.entries:
            blocks.append(f"[{page_id}]\ninitial: {PENDING_SUMMARY}")
    if not blocks:
        return EMPTY_EVIDENCE
    return "\n\n".join(blocks)


def render_observation_prompt(
    kind: ObservationKind,
    query: Query,
    evidence: EvidenceSpace,
    templates: PromptTemplateSet,
    reason: str | None = None,
    hint: str | None = None,
    turn: int | None = None,
) -> str:
    values = {
        "question": query.text,
        "evidence": render_evidence(evidence),
        "reason": reason or "",
        "turn": "" if turn is None else turn,
    }
    if kind is ObservationKind.RETRIEVED_PAGE:
        parts = [fill(templates.image_observation, **values)]
        if hint:
            parts.append(hint)
        parts.append(fill(templates.crop_evaluation, **values))
        return "\n\n".join(parts)
    template = {
        ObservationKind.CROP_RESULT: templates.crop_correction,
        ObservationKind.NO_NEW_PAGES: templates.no_image,
        ObservationKind.FORCED_ANSWER: templates.forced_answer,
        ObservationKind.INVALID_ACTION: templates.invalid_action,
    }[kind]
    return fill(template, **values)


def render_verification_hint(query: Query, templates: PromptTemplateSet, evidence: EvidenceSpace | None = None) -> str:
    return fill(
        templates.verification_hint,
        question=query.text,
        evidence=render_evidence(evidence if evidence is not None else EvidenceSpace()),
    )


@dataclass(frozen=True)
class ImageRef:
    page_id: str
    crop_box: tuple[int, int, int, int] | None = None


@dataclass(frozen=True)
class Message:
    role: str
    text: str
    image: ImageRef | None = None
    image_bytes: bytes | None = None


@dataclass(frozen=True)
class ContextWindow:
    query: Query
    pinned: tuple[Message, Message, Message]
    recent_turns: tuple[tuple[AgentResponse, Observation | None], ...]
    window: int
    turn: int
    pending: Observation | None = None
    seed: int | None = None

    def messages(self) -> list[Message]:
        out = list(self.pinned)
        for response, obs in self.recent_turns:
            out.append(Message("assistant", response.raw_text))
            if obs is not None:
                out.append(_observation_message(obs))
        if self.pending is not None:
            out.append(_observation_message(self.pending))
        return out

    def image_count(self) -> int:
        return sum(1 for m in self.messages() if m.image is not None)

    def last_prompt(self) -> str:
        """Text of the most recent environment message, used by scripted policies."""
        msgs = self.messages()
        for m in reversed(msgs):
            if m.role == "user":
                return m.text
        return ""


def _observation_message(obs: Observation) -> Message:
    image = ImageRef(obs.page.page_id, obs.crop_box) if obs.has_image and obs.page is not None else None
    return Message("user", obs.prompt_text, image, obs.image)


def evidence_message(evidence: EvidenceSpace, retrieved: Sequence[str] = ()) -> str:
    return "Evidence Space:\n" + render_evidence(evidence, retrieved)


def build_context(
    traj: Trajectory,
    templates: PromptTemplateSet,
    window: int,
    pending: Observation | None = None,
    seed: int | None = None,
) -> ContextWindow:
    if window < 1:
        raise ValueError("window must be >= 1")
    pinned = (
        Message("system", templates.system),
        Message("user", fill(templates.user, question=traj.query.text)),
        Message("user", evidence_message(traj.evidence, traj.retrieved_page_ids)),
    )
    recent = tuple((t.response, t.observation) for t in traj.turns[-window:])
    return ContextWindow(
        query=traj.query,
        pinned=pinned,
        recent_turns=recent,
        window=window,
        turn=traj.next_index(),
        pending=pending,
        seed=seed,
    )
