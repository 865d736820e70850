"""Run-level behavioural metrics. All rates are fractions in [0, 1]."""

from __future__ import annotations

from collections.abc import Sequence

from .reward import RewardBreakdown, completeness
from .trajectory import Trajectory


def finish_rate(trajs: Sequence[Trajectory]) -> float:
    """Episodes that end with a non-empty final answer."""
    return _mean([bool(t.final_answer and t.final_answer.strip()) for t in trajs])


def invalid_action_rate(trajs: Sequence[Trajectory]) -> float:
    """Episodes with at least one action that violated the format constraints."""
    return _mean([t.has_invalid_action() for t in trajs])


def bbox_usage_rate(trajs: Sequence[Trajectory]) -> float:
    """Episodes in which at least one crop was executed."""
    return _mean([bool(t.crop_turns()) for t in trajs])


def avg_retrieved(trajs: Sequence[Trajectory]) -> float:
    return _mean([len(t.retrieved_page_ids) for t in trajs])


def completeness_rate(trajs: Sequence[Trajectory]) -> float | None:
    """Share of questions whose ground-truth pages were all retrieved (questions without references are skipped)."""
    flags = [completeness(t, t.query.reference_pages).complete for t in trajs if t.query.reference_pages]
    return _mean(flags) if flags else None


def summarize(
    trajs: Sequence[Trajectory],
    rewards: Sequence[RewardBreakdown] | None = None,
    correct: Sequence[int] | None = None,
) -> dict:
    summary: dict = {
        "n": len(trajs),
        "finish_rate": finish_rate(trajs),
        "invalid_action_rate": invalid_action_rate(trajs),
        "completeness": completeness_rate(trajs),
        "avg_retrieved": avg_retrieved(trajs),
        "bbox_usage_rate": bbox_usage_rate(trajs),
    }
    if correct is not None:
        summary["accuracy"] = _mean(correct)
    if rewards is not None:
        summary["mean_total_reward"] = _mean([r.total for r in rewards])
    return summary


def _mean(values) -> float:
    values = list(values)
    if not values:
        return 0.0
    return sum(float(v) for v in values) / len(values)
