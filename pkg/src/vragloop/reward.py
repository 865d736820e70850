"""Trajectory rewards: format gate, completeness-gated answer reward, shaped retrieval reward."""

from __future__ import annotations

import re
import string
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Protocol

from .trajectory import Trajectory

HONEST_CREDIT = 0.2
FORMAT_PENALTY = -1.0

DEFAULT_HONESTY_PHRASES = (
    "cannot determine",
    "cannot be determined",
    "insufficient information",
    "information is insufficient",
    "not sufficient",
    "not enough information",
    "unable to find",
    "cannot find",
)


class JudgeFailure(Exception):
    pass


class Judge(Protocol):
    def correctness(self, question: str, reference: str, prediction: str) -> int: ...

    def honesty(self, prediction: str) -> float: ...


_PUNCT = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    return " ".join(text.lower().translate(_PUNCT).split())


class ScriptedJudge:
    """Offline judge: normalized exact match, and phrase lookup for honesty."""

    def __init__(self, honesty_phrases: Iterable[str] = DEFAULT_HONESTY_PHRASES):
        self.honesty_phrases = tuple(normalize_answer(p) for p in honesty_phrases)
        self.calls: list[str] = []

    def correctness(self, question: str, reference: str, prediction: str) -> int:
        self.calls.append("correctness")
        return int(normalize_answer(reference) == normalize_answer(prediction))

    def honesty(self, prediction: str) -> float:
        self.calls.append("honesty")
        norm = normalize_answer(prediction)
        return HONEST_CREDIT if any(p and re.search(rf"\b{re.escape(p)}\b", norm) for p in self.honesty_phrases) else 0.0


@dataclass(frozen=True)
class Completeness:
    complete: bool
    t_star: int | None
    t_search_total: int

    @property
    def delta(self) -> int | None:
        return None if self.t_star is None else self.t_search_total - self.t_star


def completeness_of(retrieved: Sequence[str], reference_pages: Iterable[str]) -> Completeness:
    """Coverage over search-ordered retrieved pages.

    ``t_star`` is the shortest prefix of ``retrieved`` containing every reference page.
    """
    refs = set(reference_pages)
    if not refs:
        raise ValueError("reference_pages must be nonempty")
    missing = set(refs)
    for n, page_id in enumerate(retrieved, 1):
        missing.discard(page_id)
        if not missing:
            return Completeness(True, n, len(retrieved))
    return Completeness(False, None, len(retrieved))


def completeness(traj: Trajectory, reference_pages: Iterable[str]) -> Completeness:
    return completeness_of(traj.retrieved_page_ids, reference_pages)


def retrieval_reward(complete: bool, delta: int | None) -> float:
    if not complete:
        return -1.0
    if delta is None or delta < 0:
        raise ValueError("a complete retrieval needs a non-negative delta")
    if delta == 0:
        return -0.5
    if delta == 1:
        return 0.0
    return -delta / 10


def format_flag(traj: Trajectory) -> bool:
    """True when the trajectory answered without ever running a search."""
    return not traj.search_turns()


def total_reward(r_ans: float, r_ret: float, format_invalid: bool) -> float:
    # Exact decimal arithmetic so e.g. 0.2 + (-0.3) is -0.1, not -0.09999999999999998.
    a, r = Fraction(repr(r_ans)), Fraction(repr(r_ret))
    flag = 1 if format_invalid else 0
    return float((a + r) * (1 - flag) + Fraction(repr(FORMAT_PENALTY)) * flag)


def answer_reward(traj: Trajectory, judge: Judge, complete: bool) -> float:
    prediction = traj.final_answer or ""
    if complete:
        reference = traj.query.reference_answer
        if reference is None:
            raise ValueError(f"query {traj.query.id!r} has no reference answer")
        score = judge.correctness(traj.query.text, reference, prediction)
        if score not in (0, 1):
            raise JudgeFailure(f"correctness judge returned {score!r}")
        return float(score)
    score = judge.honesty(prediction)
    if score not in (0, HONEST_CREDIT):
        raise JudgeFailure(f"honesty judge returned {score!r}")
    return float(score)


@dataclass(frozen=True)
class RewardBreakdown:
    r_ans: float
    r_ret: float
    format_invalid: bool
    total: float
    t_star: int | None
    t_search_total: int
    delta: int | None
    complete: bool

    def to_dict(self) -> dict:
        return asdict(self)


def score_trajectory(traj: Trajectory, judge: Judge, reference_pages: Iterable[str] | None = None) -> RewardBreakdown:
    refs = reference_pages if reference_pages is not None else traj.query.reference_pages
    if not refs:
        raise ValueError(f"query {traj.query.id!r} has no reference pages")
    comp = completeness(traj, refs)
    flag = format_flag(traj)
    r_ans = answer_reward(traj, judge, comp.complete)
    r_ret = retrieval_reward(comp.complete, comp.delta)
    return RewardBreakdown(
        r_ans=r_ans,
        r_ret=r_ret,
        format_invalid=flag,
        total=total_reward(r_ans, r_ret, flag),
        t_star=comp.t_star,
        t_search_total=comp.t_search_total,
        delta=comp.delta,
        complete=comp.complete,
    )

