"""Hand-building trajectories for tests without running the loop."""

from __future__ import annotations

from vragloop.context import PromptTemplateSet, render_observation_prompt
from vragloop.grammar import AgentResponse, Answer, Crop, InvalidReason, Search, make_response
from vragloop.trajectory import Observation, ObservationKind, PageRef, Query, Trajectory, Turn, record_turn


class TrajBuilder:
    def __init__(self, query: Query, templates: PromptTemplateSet | None = None, page_size=(1000, 1000)):
        self.traj = Trajectory(query=query)
        self.templates = templates or PromptTemplateSet.load()
        self.page_size = page_size

    def _prompt(self, kind: ObservationKind, **kw) -> str:
        return render_observation_prompt(kind, self.traj.query, self.traj.evidence, self.templates, **kw)

    def _add(self, response: AgentResponse, obs: Observation | None, forced=False) -> TrajBuilder:
        record_turn(self.traj, Turn(self.traj.next_index(), response, obs), forced=forced)
        return self

    def search(self, page_id: str, think: str = "looking", query: str = "q") -> TrajBuilder:
        obs = Observation(ObservationKind.RETRIEVED_PAGE, self._prompt(ObservationKind.RETRIEVED_PAGE),
                          page=PageRef(page_id, *self.page_size))
        return self._add(make_response(think, Search(query)), obs)

    def no_new(self, think: str = "looking again", query: str = "q") -> TrajBuilder:
        obs = Observation(ObservationKind.NO_NEW_PAGES, self._prompt(ObservationKind.NO_NEW_PAGES))
        return self._add(make_response(think, Search(query)), obs)

    def crop(self, bbox=(100, 100, 200, 200), think: str = "zooming", page_id: str | None = None) -> TrajBuilder:
        page = self.traj.current_page()
        if page is None:
            page = PageRef(page_id or "unknown", *self.page_size)
        obs = Observation(ObservationKind.CROP_RESULT, self._prompt(ObservationKind.CROP_RESULT),
                          page=page, crop_box=tuple(bbox))
        return self._add(make_response(think, Crop(tuple(bbox))), obs)

    def rejected_crop(self, bbox=(100, 100, 200, 200), think: str = "zooming",
                      reason=InvalidReason.NO_IMAGE_TO_CROP) -> TrajBuilder:
        """A well-formed crop the environment refused (no page to crop, or a chained crop)."""
        obs = Observation(ObservationKind.INVALID_ACTION,
                          self._prompt(ObservationKind.INVALID_ACTION, reason=reason.value), reason=reason)
        return self._add(make_response(think, Crop(tuple(bbox))), obs)

    def invalid(self, raw: str = "<search>no think</search>", reason=InvalidReason.MISSING_THINK) -> TrajBuilder:
        obs = Observation(ObservationKind.INVALID_ACTION,
                          self._prompt(ObservationKind.INVALID_ACTION, reason=reason.value), reason=reason)
        return self._add(AgentResponse("", None, raw, reason), obs)

    def answer(self, text: str, think: str = "done", forced=False) -> Trajectory:
        self._add(make_response(think, Answer(text)), None, forced=forced)
        return self.traj


def random_trajectory(query: Query, ops, finish: bool = False, templates=None) -> Trajectory:
    """Trajectory from a list of op names: search, crop, invalid, nonew.

    A crop with no current page is logged as an invalid turn instead.
    """
    b = TrajBuilder(query, templates)
    n = 0
    for i, op in enumerate(ops):
        if op == "search":
            n += 1
            b.search(f"p{n}", think=f"think {i}")
        elif op == "crop" and b.traj.current_page() is not None:
            b.crop(think=f"crop think {i}")
        elif op == "nonew":
            b.no_new(think=f"nothing {i}")
        else:
            b.invalid()
    if finish:
        b.answer("done", think="final")
    return b.traj
