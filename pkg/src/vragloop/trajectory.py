"""Trajectory data model, evidence-space updates and JSONL (de)serialization."""

from __future__ import annotations

import json
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .grammar import (
    Action,
    AgentResponse,
    Answer,
    InvalidReason,
    Search,
    action_from_dict,
    action_to_dict,
)


class TrajectoryError(Exception):
    pass


class PostCropWithoutPre(TrajectoryError):
    pass


class AppendAfterTerminal(TrajectoryError):
    pass


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    reference_answer: str | None = None
    reference_pages: frozenset[str] | None = None

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("query text must be nonempty")
        if self.reference_pages is not None:
            object.__setattr__(self, "reference_pages", frozenset(self.reference_pages))
            if not self.reference_pages:
                raise ValueError("reference_pages, when given, must be nonempty")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "reference_answer": self.reference_answer,
            "reference_pages": sorted(self.reference_pages) if self.reference_pages is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Query:
        refs = d.get("reference_pages")
        return cls(
            id=str(d["id"]),
            text=d["text"],
            reference_answer=d.get("reference_answer"),
            reference_pages=frozenset(refs) if refs is not None else None,
        )


@dataclass(frozen=True)
class PageRef:
    page_id: str
    width_px: int
    height_px: int

    def __post_init__(self) -> None:
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError(f"page {self.page_id!r} has non-positive size")


class ObservationKind(str, Enum):
    RETRIEVED_PAGE = "RetrievedPage"
    CROP_RESULT = "CropResult"
    NO_NEW_PAGES = "NoNewPages"
    INVALID_ACTION = "InvalidActionNotice"
    FORCED_ANSWER = "ForcedAnswerRequest"


@dataclass(frozen=True)
class Observation:
    kind: ObservationKind
    prompt_text: str
    page: PageRef | None = None
    crop_box: tuple[int, int, int, int] | None = None
    reason: InvalidReason | None = None
    # Rendered pixels for the policy; never serialized.
    image: bytes | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind is ObservationKind.RETRIEVED_PAGE and self.page is None:
            raise ValueError("RetrievedPage observation needs a page")
        if self.kind is ObservationKind.CROP_RESULT and (self.page is None or self.crop_box is None):
            raise ValueError("CropResult observation needs a page and a crop box")
        if self.kind in (ObservationKind.NO_NEW_PAGES, ObservationKind.INVALID_ACTION, ObservationKind.FORCED_ANSWER):
            if self.page is not None:
                raise ValueError(f"{self.kind.value} observation carries no page")

    @property
    def has_image(self) -> bool:
        return self.kind in (ObservationKind.RETRIEVED_PAGE, ObservationKind.CROP_RESULT)

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind.value, "prompt_text": self.prompt_text}
        if self.page is not None:
            d["page"] = {"page_id": self.page.page_id, "width_px": self.page.width_px, "height_px": self.page.height_px}
        if self.crop_box is not None:
            d["crop_box"] = list(self.crop_box)
        if self.reason is not None:
            d["reason"] = self.reason.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Observation:
        page = d.get("page")
        box = d.get("crop_box")
        return cls(
            kind=ObservationKind(d["kind"]),
            prompt_text=d["prompt_text"],
            page=PageRef(**page) if page else None,
            crop_box=tuple(box) if box is not None else None,  # type: ignore[arg-type]
            reason=InvalidReason(d["reason"]) if d.get("reason") else None,
        )


@dataclass(frozen=True)
class Turn:
    index: int
    response: AgentResponse
    observation: Observation | None = None

    @property
    def action(self) -> Action | None:
        return self.response.action

    @property
    def is_invalid(self) -> bool:
        obs = self.observation
        return not self.response.valid or (obs is not None and obs.kind is ObservationKind.INVALID_ACTION)

    def to_dict(self) -> dict:
        r = self.response
        return {
            "index": self.index,
            "response": {
                "think": r.think,
                "action": action_to_dict(r.action),
                "raw_text": r.raw_text,
                "invalid_reason": r.invalid_reason.value if r.invalid_reason else None,
            },
            "observation": self.observation.to_dict() if self.observation else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Turn:
        r = d["response"]
        reason = r.get("invalid_reason")
        response = AgentResponse(
            think=r["think"],
            action=action_from_dict(r.get("action")),
            raw_text=r["raw_text"],
            invalid_reason=InvalidReason(reason) if reason else None,
        )
        obs = d.get("observation")
        return cls(index=d["index"], response=response, observation=Observation.from_dict(obs) if obs else None)


@dataclass
class EvidenceEntry:
    pre: str
    post: str | None = None


class Phase(str, Enum):
    PRE_CROP = "PreCrop"
    POST_CROP = "PostCrop"


@dataclass
class EvidenceSpace:
    """Ordered page_id -> (pre, post) summaries. Dict order is insertion order."""

    entries: dict[str, EvidenceEntry] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, page_id: object) -> bool:
        return page_id in self.entries

    def copy(self) -> EvidenceSpace:
        return EvidenceSpace({k: EvidenceEntry(v.pre, v.post) for k, v in self.entries.items()})

    def to_dict(self) -> dict:
        return {k: {"pre": v.pre, "post": v.post} for k, v in self.entries.items()}

    @classmethod
    def from_dict(cls, d: dict) -> EvidenceSpace:
        return cls({k: EvidenceEntry(v["pre"], v.get("post")) for k, v in d.items()})


def update_evidence(
    evidence: EvidenceSpace,
    page_id: str,
    think: str,
    phase: Phase,
    char_cap: int | None = None,
) -> EvidenceSpace:
    """Return a new evidence space with ``think`` recorded for ``page_id``.

    A pre summary is written once and never amended. A post summary
    overwrites any earlier one (latest crop wins).
    """
    text = think if char_cap is None else think[:char_cap]
    out = evidence.copy()
    if phase is Phase.PRE_CROP:
        if page_id not in out.entries:
            out.entries[page_id] = EvidenceEntry(pre=text)
        return out
    entry = out.entries.get(page_id)
    if entry is None:
        raise PostCropWithoutPre(f"crop summary for {page_id!r}, which has no pre-crop entry")
    entry.post = text
    return out


class Status(str, Enum):
    RUNNING = "Running"
    ANSWERED = "Answered"
    FORCED_ANSWERED = "ForcedAnswered"
    EXHAUSTED = "Exhausted"


@dataclass
class Trajectory:
    query: Query
    turns: list[Turn] = field(default_factory=list)
    evidence: EvidenceSpace = field(default_factory=EvidenceSpace)
    retrieved_page_ids: list[str] = field(default_factory=list)
    status: Status = Status.RUNNING
    final_answer: str | None = None

    @property
    def terminal(self) -> bool:
        return self.status is not Status.RUNNING

    def next_index(self) -> int:
        return self.turns[-1].index + 1 if self.turns else 1

    def search_turns(self) -> list[Turn]:
        """Turns whose Search action was executed (page or no-new-pages)."""
        return [
            t for t in self.turns
            if isinstance(t.action, Search) and t.observation is not None
            and t.observation.kind in (ObservationKind.RETRIEVED_PAGE, ObservationKind.NO_NEW_PAGES)
        ]

    def crop_turns(self) -> list[Turn]:
        return [t for t in self.turns if t.observation is not None and t.observation.kind is ObservationKind.CROP_RESULT]

    def has_invalid_action(self) -> bool:
        return any(t.is_invalid for t in self.turns)

    def evidence_target(self) -> tuple[str, Phase] | None:
        """Page and slot that the next valid think summarizes.

        That is the page shown by the latest non-invalid observation:
        a retrieved page gets its pre summary, a crop result its post summary.
        """
        for turn in reversed(self.turns):
            obs = turn.observation
            if turn.is_invalid:
                continue
            if obs is None:
                return None
            if obs.kind is ObservationKind.RETRIEVED_PAGE:
                return (obs.page.page_id, Phase.PRE_CROP)  # type: ignore[union-attr]
            if obs.kind is ObservationKind.CROP_RESULT:
                return (obs.page.page_id, Phase.POST_CROP)  # type: ignore[union-attr]
            return None
        return None

    def current_page(self) -> PageRef | None:
        """Page a crop would apply to: the latest non-invalid observation, if it is a retrieved page."""
        for turn in reversed(self.turns):
            if turn.is_invalid:
                continue
            obs = turn.observation
            if obs is not None and obs.kind is ObservationKind.RETRIEVED_PAGE:
                return obs.page
            return None
        return None

    def last_valid_observation(self) -> Observation | None:
        for turn in reversed(self.turns):
            if not turn.is_invalid:
                return turn.observation
        return None

    def to_dict(self) -> dict:
        return {
            "query": self.query.to_dict(),
            "turns": [t.to_dict() for t in self.turns],
            "evidence": self.evidence.to_dict(),
            "retrieved_page_ids": list(self.retrieved_page_ids),
            "status": self.status.value,
            "final_answer": self.final_answer,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Trajectory:
        return cls(
            query=Query.from_dict(d["query"]),
            turns=[Turn.from_dict(t) for t in d["turns"]],
            evidence=EvidenceSpace.from_dict(d["evidence"]),
            retrieved_page_ids=list(d["retrieved_page_ids"]),
            status=Status(d["status"]),
            final_answer=d.get("final_answer"),
        )


def append_turn(traj: Trajectory, turn: Turn, forced: bool = False) -> Trajectory:
    if traj.terminal:
        raise AppendAfterTerminal(f"trajectory {traj.query.id!r} is already {traj.status.value}")
    if traj.turns and turn.index <= traj.turns[-1].index:
        raise TrajectoryError("turn indices must strictly increase")
    traj.turns.append(turn)
    obs = turn.observation
    if isinstance(turn.action, Search) and obs is not None and obs.kind is ObservationKind.RETRIEVED_PAGE:
        page_id = obs.page.page_id  # type: ignore[union-attr]
        if page_id in traj.retrieved_page_ids:
            raise TrajectoryError(f"page {page_id!r} retrieved twice")
        traj.retrieved_page_ids.append(page_id)
    if isinstance(turn.action, Answer) and obs is None:
        traj.status = Status.FORCED_ANSWERED if forced else Status.ANSWERED
        traj.final_answer = turn.action.text
    return traj


def absorb_think(traj: Trajectory, think: str, char_cap: int | None = None) -> None:
    """Store a valid response's think as the summary of the page it was written about."""
    target = traj.evidence_target()
    if target is not None and think:
        traj.evidence = update_evidence(traj.evidence, target[0], think, target[1], char_cap)


def record_turn(traj: Trajectory, turn: Turn, forced: bool = False, char_cap: int | None = None) -> Trajectory:
    """Fold the turn's think into the evidence space, then append the turn."""
    if turn.response.valid and not turn.is_invalid:
        absorb_think(traj, turn.response.think, char_cap)
    return append_turn(traj, turn, forced=forced)


def replay(logged: Trajectory, char_cap: int | None = None) -> Trajectory:
    """Rebuild a trajectory from its logged turns alone."""
    traj = Trajectory(query=logged.query)
    last = len(logged.turns) - 1
    for i, turn in enumerate(logged.turns):
        forced = i == last and logged.status is Status.FORCED_ANSWERED
        record_turn(traj, turn, forced=forced, char_cap=char_cap)
    if logged.status is Status.EXHAUSTED:
        traj.status = Status.EXHAUSTED
        traj.final_answer = logged.final_answer
    return traj


def dumps(traj: Trajectory) -> str:
    return json.dumps(traj.to_dict(), ensure_ascii=False, sort_keys=False)


def write_jsonl(path: str | Path, trajectories: Iterable[Trajectory]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for traj in trajectories:
            f.write(dumps(traj) + "\n")


def read_jsonl(path: str | Path) -> Iterator[Trajectory]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield Trajectory.from_dict(json.loads(line))
            except (KeyError, ValueError) as e:
                raise ValueError(f"{path}:{lineno}: bad trajectory record: {e}") from e
