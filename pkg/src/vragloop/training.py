"""Training-data preparation: SFT trajectory filters and augmentation, RL loss-mask spans."""

from __future__ import annotations

import random
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from enum import Enum

from .context import PromptTemplateSet, fill, render_observation_prompt, render_verification_hint
from .grammar import DEFAULT_DISPLAYED_SPACE, Answer, Crop, Search, make_response
from .reward import Judge, ScriptedJudge, completeness_of
from .trajectory import (
    Observation,
    ObservationKind,
    PageRef,
    Status,
    Trajectory,
    Turn,
    record_turn,
)

VERIFICATION_INTENT = "Before answering, I will run one more search to verify this answer against another page."
MAX_SFT_SEARCHES = 10


class Rejection(str, Enum):
    BBOX_NOT_AFTER_RETRIEVAL = "BboxNotAfterRetrieval"
    TRIVIAL_FULL_IMAGE_CROP = "TrivialFullImageCrop"
    INCOMPLETE_RETRIEVAL = "IncompleteRetrieval"
    TOO_MANY_SEARCHES = "TooManySearches"
    WRONG_ANSWER = "WrongAnswer"


@dataclass(frozen=True)
class FilterVerdict:
    rejections: tuple[Rejection, ...] = ()

    @property
    def accepted(self) -> bool:
        return not self.rejections


def sft_filter(
    traj: Trajectory,
    reference_pages: Iterable[str],
    reference_answer: str,
    max_searches: int = MAX_SFT_SEARCHES,
    judge: Judge | None = None,
    displayed_space: tuple[int, int] = DEFAULT_DISPLAYED_SPACE,
) -> FilterVerdict:
    """Evaluate every quality rule; the verdict lists all that fail."""
    judge = judge or ScriptedJudge()
    rejections: list[Rejection] = []
    full_image = (0, 0, *displayed_space)

    ungrounded = trivial = False
    for i, turn in enumerate(traj.turns):
        if not isinstance(turn.action, Crop):
            continue
        prev = traj.turns[i - 1].observation if i > 0 else None
        if prev is None or prev.kind is not ObservationKind.RETRIEVED_PAGE:
            ungrounded = True
        if tuple(turn.action.bbox) == full_image:
            trivial = True
    if ungrounded:
        rejections.append(Rejection.BBOX_NOT_AFTER_RETRIEVAL)
    if trivial:
        rejections.append(Rejection.TRIVIAL_FULL_IMAGE_CROP)
    if not completeness_of(traj.retrieved_page_ids, reference_pages).complete:
        rejections.append(Rejection.INCOMPLETE_RETRIEVAL)
    if sum(1 for t in traj.turns if isinstance(t.action, Search)) > max_searches:
        rejections.append(Rejection.TOO_MANY_SEARCHES)
    if traj.final_answer is None or judge.correctness(traj.query.text, reference_answer, traj.final_answer) != 1:
        rejections.append(Rejection.WRONG_ANSWER)
    return FilterVerdict(tuple(rejections))


class AugmentError(Exception):
    pass


class NoUnseenPageAvailable(AugmentError):
    pass


class AlreadyAugmented(AugmentError):
    pass


def is_augmented(traj: Trajectory) -> bool:
    if len(traj.turns) < 2:
        return False
    penultimate = traj.turns[-2]
    return isinstance(penultimate.action, Search) and penultimate.response.think.endswith(VERIFICATION_INTENT)


def pick_verification_page(
    traj: Trajectory,
    pages: Sequence[PageRef],
    document_of: dict[str, str],
    rng: random.Random,
) -> PageRef:
    """Random page from the same document as the last retrieved page, never shown before."""
    if not traj.retrieved_page_ids:
        raise NoUnseenPageAvailable(f"{traj.query.id}: nothing retrieved, document unknown")
    doc = document_of[traj.retrieved_page_ids[-1]]
    seen = set(traj.retrieved_page_ids)
    candidates = [p for p in pages if document_of.get(p.page_id) == doc and p.page_id not in seen]
    if not candidates:
        raise NoUnseenPageAvailable(f"{traj.query.id}: every page of document {doc!r} already seen")
    return rng.choice(candidates)


def sft_augment(
    traj: Trajectory,
    verification_reasoning: str,
    verification_page: PageRef,
    templates: PromptTemplateSet | None = None,
) -> Trajectory:
    """Anchor all searches to the original question and add a final verification round.

    The last answer turn becomes a verification search (its think gains an
    intent statement); a new terminal turn carries ``verification_reasoning``
    followed by the original answer.
    """
    if is_augmented(traj):
        raise AlreadyAugmented(f"{traj.query.id}: trajectory already ends with a verification round")
    if not traj.turns or not isinstance(traj.turns[-1].action, Answer):
        raise AugmentError(f"{traj.query.id}: trajectory does not end with an answer")
    if verification_page.page_id in traj.retrieved_page_ids:
        raise NoUnseenPageAvailable(f"{traj.query.id}: page {verification_page.page_id!r} was already retrieved")
    if not verification_reasoning.strip():
        raise ValueError("verification_reasoning must be nonempty")
    templates = templates or PromptTemplateSet.load()
    question = traj.query.text

    out = Trajectory(query=traj.query)
    for turn in traj.turns[:-1]:
        response = turn.response
        if isinstance(response.action, Search):
            response = make_response(response.think, Search(question))
        record_turn(out, Turn(turn.index, response, turn.observation))

    last = traj.turns[-1]
    answer = last.action
    assert isinstance(answer, Answer)
    think = f"{last.response.think} {VERIFICATION_INTENT}".strip()
    hint = render_verification_hint(traj.query, templates, out.evidence)
    obs = Observation(
        ObservationKind.RETRIEVED_PAGE,
        render_observation_prompt(ObservationKind.RETRIEVED_PAGE, traj.query, out.evidence, templates, hint=hint),
        page=verification_page,
    )
    record_turn(out, Turn(last.index, make_response(think, Search(question)), obs))
    record_turn(out, Turn(last.index + 1, make_response(verification_reasoning.strip(), answer)))
    if traj.status is Status.FORCED_ANSWERED:
        out.status = Status.FORCED_ANSWERED
    return out


class SpanKind(str, Enum):
    AGENT = "AgentGenerated"
    OBSERVATION = "Observation"


SEGMENT_ROLES = ("system", "user", "agent", "observation")


@dataclass(frozen=True)
class MaskSpan:
    start: int
    end: int
    kind: SpanKind

    def to_dict(self) -> dict:
        return {"start": self.start, "end": self.end, "kind": self.kind.value}


@dataclass(frozen=True)
class Segment:
    role: str
    length: int

    def __post_init__(self) -> None:
        if self.role not in SEGMENT_ROLES:
            raise ValueError(f"unknown segment role {self.role!r}")
        if self.length <= 0:
            raise ValueError("segment lengths must be positive")


class EmptyTranscript(ValueError):
    pass


def rl_mask_spans(transcript: Sequence[Segment]) -> list[MaskSpan]:
    """Loss-mask spans over the full transcript; adjacent segments of the same kind merge."""
    if not transcript:
        raise EmptyTranscript("transcript has no segments")
    spans: list[MaskSpan] = []
    pos = 0
    for seg in transcript:
        kind = SpanKind.AGENT if seg.role == "agent" else SpanKind.OBSERVATION
        end = pos + seg.length
        if spans and spans[-1].kind is kind:
            spans[-1] = MaskSpan(spans[-1].start, end, kind)
        else:
            spans.append(MaskSpan(pos, end, kind))
        pos = end
    return spans



def transcript_segments(
    traj: Trajectory,
    templates: PromptTemplateSet,
    count_tokens,
    image_tokens: int = 0,
) -> list[Segment]:
    """Segment the full, uncompressed trajectory for masking.

    ``count_tokens`` is the caller's tokenizer (str -> int); each observation
    image adds ``image_tokens`` to its segment.
    """
    segments = [
        Segment("system", max(1, count_tokens(templates.system))),
        Segment("user", max(1, count_tokens(fill(templates.user, question=traj.query.text)))),
    ]
    for turn in traj.turns:
        segments.append(Segment("agent", max(1, count_tokens(turn.response.raw_text))))
        obs = turn.observation
        if obs is not None:
            n = count_tokens(obs.prompt_text) + (image_tokens if obs.has_image else 0)
            segments.append(Segment("observation", max(1, n)))
    return segments
