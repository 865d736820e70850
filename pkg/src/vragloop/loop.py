"""The agent loop: policy -> parse -> tool -> observation, with forced answering."""

from __future__ import annotations

import logging
import time
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Protocol

from .context import ContextWindow, PromptTemplateSet, build_context, render_observation_prompt, render_verification_hint
from .grammar import DEFAULT_DISPLAYED_SPACE, AgentResponse, Answer, Crop, InvalidReason, Search, parse_response
from .retrieval import DEFAULT_TOP_K, QueryEmbedding, RetrievalIndex, retrieve_next_unseen
from .trajectory import (
    Observation,
    ObservationKind,
    PageRef,
    Query,
    Status,
    Trajectory,
    Turn,
    absorb_think,
    append_turn,
)
from .vision import DEFAULT_MARGIN_PX, CropRequest, DegenerateRegion, crop_image, map_and_expand

log = logging.getLogger(__name__)

DEFAULT_VERIFICATION_MARKERS = ("verify", "confirm", "double-check")


class PolicyFailure(Exception):
    """The policy backend could not produce a response (after its own retries)."""


class Policy(Protocol):
    def generate(self, context: ContextWindow) -> str: ...


class QueryEncoder(Protocol):
    def embed_query(self, text: str) -> QueryEmbedding: ...


class ImageSource(Protocol):
    def load(self, page_id: str) -> bytes: ...


@dataclass(frozen=True)
class LoopConfig:
    max_turns: int = 10
    window: int = 2
    top_k: int = DEFAULT_TOP_K
    verification_markers: tuple[str, ...] = DEFAULT_VERIFICATION_MARKERS
    invalid_retry_limit: int = 2
    displayed_space: tuple[int, int] = DEFAULT_DISPLAYED_SPACE
    margin_px: int = DEFAULT_MARGIN_PX
    crop_output_size: tuple[int, int] | None = None
    evidence_char_cap: int | None = None

    def __post_init__(self) -> None:
        if self.max_turns < 1:
            raise ValueError("max_turns must be >= 1")
        if not 1 <= self.window <= 8:
            raise ValueError("window must be in 1..8")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.invalid_retry_limit < 0:
            raise ValueError("invalid_retry_limit must be >= 0")


@dataclass(frozen=True)
class LoopEvent:
    kind: str  # Searched | Cropped | InvalidAction | VerificationHinted | ForcedAnswer | Answered | PolicyFailure
    turn: int
    detail: dict = field(default_factory=dict)
    timestamp: float = field(default_factory=time.time)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "turn": self.turn, "detail": self.detail, "timestamp": self.timestamp}


def detect_verification(think: str, markers: Sequence[str]) -> bool:
    lowered = think.lower()
    return any(m and m.lower() in lowered for m in markers)


class Environment:
    """Executes parsed actions against the index and crop tool for one trajectory."""

    def __init__(
        self,
        index: RetrievalIndex,
        encoder: QueryEncoder,
        templates: PromptTemplateSet,
        cfg: LoopConfig,
        pages: Mapping[str, PageRef] | None = None,
        images: ImageSource | None = None,
        on_event: Callable[[LoopEvent], None] | None = None,
    ):
        self.index = index
        self.encoder = encoder
        self.templates = templates
        self.cfg = cfg
        self.pages = pages or {}
        self.images = images
        self.on_event = on_event

    def emit(self, kind: str, turn: int, **detail) -> None:
        if self.on_event is not None:
            self.on_event(LoopEvent(kind, turn, detail))

    def page_ref(self, page_id: str) -> PageRef:
        ref = self.pages.get(page_id)
        if ref is None:
            # no manifest: assume the page is shown at its native size
            ref = PageRef(page_id, *self.cfg.displayed_space)
        return ref

    def _invalid(self, traj: Trajectory, reason: InvalidReason) -> Observation:
        text = render_observation_prompt(
            ObservationKind.INVALID_ACTION, traj.query, traj.evidence, self.templates, reason=reason.value
        )
        return Observation(ObservationKind.INVALID_ACTION, text, reason=reason)

    def step(self, traj: Trajectory, response: AgentResponse, forced: bool = False) -> Observation | None:
        """Apply one response, record the turn, and return the observation (None on answer)."""
        idx = traj.next_index()
        action = response.action
        obs: Observation | None

        if action is None:
            obs = self._invalid(traj, response.invalid_reason or InvalidReason.NO_ACTION_TAG)
        elif forced and not isinstance(action, Answer):
            obs = self._invalid(traj, InvalidReason.ANSWER_REQUIRED)
        elif isinstance(action, Answer):
            absorb_think(traj, response.think, self.cfg.evidence_char_cap)
            append_turn(traj, Turn(idx, response), forced=forced)
            self.emit("Answered", idx, text=action.text, forced=forced)
            return None
        elif isinstance(action, Search):
            obs = self._search(traj, response, idx)
        else:
            obs = self._crop(traj, response, action, idx)

        if obs.kind is ObservationKind.INVALID_ACTION:
            self.emit("InvalidAction", idx, reason=obs.reason.value if obs.reason else None)
        append_turn(traj, Turn(idx, response, obs))
        return obs

    def _search(self, traj: Trajectory, response: AgentResponse, idx: int) -> Observation:
        action = response.action
        assert isinstance(action, Search)
        hinted = detect_verification(response.think, self.cfg.verification_markers)
        page_id = retrieve_next_unseen(
            self.index, self.encoder.embed_query(action.query), self.cfg.top_k, traj.retrieved_page_ids
        )
        absorb_think(traj, response.think, self.cfg.evidence_char_cap)
        self.emit("Searched", idx, page_id=page_id, query=action.query)
        if page_id is None:
            text = render_observation_prompt(ObservationKind.NO_NEW_PAGES, traj.query, traj.evidence, self.templates)
            return Observation(ObservationKind.NO_NEW_PAGES, text)
        hint = None
        if hinted:
            hint = render_verification_hint(traj.query, self.templates, traj.evidence)
            self.emit("VerificationHinted", idx, page_id=page_id)
        text = render_observation_prompt(ObservationKind.RETRIEVED_PAGE, traj.query, traj.evidence, self.templates, hint=hint)
        image = self.images.load(page_id) if self.images is not None else None
        return Observation(ObservationKind.RETRIEVED_PAGE, text, page=self.page_ref(page_id), image=image)

    def _crop(self, traj: Trajectory, response: AgentResponse, action: Crop, idx: int) -> Observation:
        last = traj.last_valid_observation()
        if last is not None and last.kind is ObservationKind.CROP_RESULT:
            return self._invalid(traj, InvalidReason.CHAINED_CROP)
        page = traj.current_page()
        if page is None:
            return self._invalid(traj, InvalidReason.NO_IMAGE_TO_CROP)
        req = CropRequest(page, action.bbox, self.cfg.displayed_space, self.cfg.margin_px, self.cfg.crop_output_size)
        try:
            region = map_and_expand(req)
        except DegenerateRegion:
            return self._invalid(traj, InvalidReason.MALFORMED_BBOX)
        absorb_think(traj, response.think, self.cfg.evidence_char_cap)
        self.emit("Cropped", idx, page_id=page.page_id, region=list(region.rect_original))
        text = render_observation_prompt(ObservationKind.CROP_RESULT, traj.query, traj.evidence, self.templates)
        image = None
        if self.images is not None:
            image = crop_image(self.images.load(page.page_id), region, self.cfg.crop_output_size)
        return Observation(ObservationKind.CROP_RESULT, text, page=page, crop_box=region.rect_original, image=image)


def run_trajectory(
    query: Query,
    index: RetrievalIndex,
    policy: Policy,
    cfg: LoopConfig,
    encoder: QueryEncoder,
    templates: PromptTemplateSet | None = None,
    pages: Mapping[str, PageRef] | None = None,
    images: ImageSource | None = None,
    on_event: Callable[[LoopEvent], None] | None = None,
    seed: int | None = None,
) -> Trajectory:
    """Run one query to completion.

    Each loop turn allows ``invalid_retry_limit`` retries for malformed
    responses; running out of retries or of turns triggers one forced-answer
    generation (itself retried the same way).
    """
    templates = templates or PromptTemplateSet.load()
    env = Environment(index, encoder, templates, cfg, pages, images, on_event)
    traj = Trajectory(query=query)

    def generate(pending: Observation | None = None) -> AgentResponse:
        ctx = build_context(traj, templates, cfg.window, pending=pending, seed=seed)
        raw = policy.generate(ctx)
        return parse_response(raw, cfg.displayed_space).as_response(raw)

    try:
        for _ in range(cfg.max_turns):
            failures = 0
            while True:
                obs = env.step(traj, generate())
                if obs is None or obs.kind is not ObservationKind.INVALID_ACTION:
                    break
                failures += 1
                if failures > cfg.invalid_retry_limit:
                    break
            if traj.terminal:
                return traj
            if failures > cfg.invalid_retry_limit:
                log.debug("%s: retry limit hit, forcing an answer", query.id)
                break
        _force_answer(traj, env, generate)
    except PolicyFailure as e:
        log.warning("%s: policy failure: %s", query.id, e)
        env.emit("PolicyFailure", traj.next_index(), error=str(e))
        traj.status = Status.EXHAUSTED
    return traj


def _force_answer(traj: Trajectory, env: Environment, generate: Callable[[Observation | None], AgentResponse]) -> None:
    cfg = env.cfg
    env.emit("ForcedAnswer", traj.next_index())
    failures = 0
    while True:
        text = render_observation_prompt(
            ObservationKind.FORCED_ANSWER, traj.query, traj.evidence, env.templates, turn=cfg.max_turns
        )
        obs = env.step(traj, generate(Observation(ObservationKind.FORCED_ANSWER, text)), forced=True)
        if obs is None:
            return
        failures += 1
        if failures > cfg.invalid_retry_limit:
            traj.status = Status.EXHAUSTED
            return
