"""Batch operations behind the CLI: run an eval set, score it, build SFT data."""

from __future__ import annotations

import csv
import json
import logging
import random
import threading
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .backends import ChatClient, HttpJudge, HttpPolicy, ScriptedPolicy
from .config import ConfigError, RunConfig, derive_seed
from .context import PromptTemplateSet
from .corpus import CorpusManifest, PageImages
from .loop import LoopEvent, Policy, QueryEncoder, run_trajectory
from .metrics import summarize
from .retrieval import RetrievalIndex
from .reward import Judge, JudgeFailure, RewardBreakdown, ScriptedJudge, score_trajectory
from .trajectory import PageRef, Query, Trajectory
from .training import AugmentError, pick_verification_page, sft_augment, sft_filter

log = logging.getLogger(__name__)


def make_policy(spec: dict, images: PageImages | None = None) -> Policy:
    kind = spec.get("kind")
    if kind == "scripted":
        return ScriptedPolicy.from_file(spec["script"])
    if kind == "http":
        return HttpPolicy(_client(spec), images=images, temperature=spec.get("temperature", 0.0),
                          max_tokens=spec.get("max_tokens", 1024))
    raise ConfigError(f"unknown policy backend {kind!r}")


def make_judge(spec: dict | None) -> Judge | None:
    if not spec:
        return None
    kind = spec.get("kind")
    if kind == "scripted":
        phrases = spec.get("honesty_phrases")
        return ScriptedJudge(phrases) if phrases else ScriptedJudge()
    if kind == "http":
        return HttpJudge(_client(spec))
    raise ConfigError(f"unknown judge backend {kind!r}")


def _client(spec: dict) -> ChatClient:
    import os

    try:
        endpoint, model = spec["endpoint"], spec["model"]
    except KeyError as e:
        raise ConfigError(f"http backend needs {e}") from e
    key_env = spec.get("api_key_env")
    return ChatClient(endpoint, model, api_key=os.environ.get(key_env) if key_env else spec.get("api_key"),
                      timeout=spec.get("timeout", 120.0), max_attempts=spec.get("max_attempts", 3),
                      backoff_s=spec.get("backoff_s", 1.0))


@dataclass
class RunResult:
    trajectories: list[Trajectory]
    failures: list[str] = field(default_factory=list)
    events: list[LoopEvent] = field(default_factory=list)


def run_samples(
    samples: Sequence[Query],
    index: RetrievalIndex,
    policy: Policy,
    cfg: RunConfig,
    encoder: QueryEncoder,
    templates: PromptTemplateSet,
    pages: dict[str, PageRef] | None = None,
    images: PageImages | None = None,
) -> RunResult:
    """Run every sample; results come back ordered by sample id."""
    lock = threading.Lock()
    result = RunResult([])

    def on_event(ev: LoopEvent) -> None:
        with lock:
            result.events.append(ev)

    def one(q: Query) -> tuple[Query, Trajectory | None, str | None]:
        events: list[LoopEvent] = []
        try:
            traj = run_trajectory(q, index, policy, cfg.loop, encoder, templates, pages, images,
                                  on_event=events.append, seed=derive_seed(cfg.seed, q.id))
        except Exception as e:  # per-sample failures are recorded, the run continues
            log.exception("%s failed", q.id)
            return q, None, f"{q.id}: {type(e).__name__}: {e}"
        for ev in events:
            on_event(LoopEvent(ev.kind, ev.turn, {"query_id": q.id, **ev.detail}, ev.timestamp))
        failure = next((f"{q.id}: {ev.detail.get('error')}" for ev in events if ev.kind == "PolicyFailure"), None)
        return q, traj, failure

    ordered = sorted(samples, key=lambda q: q.id)
    with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
        outcomes = list(pool.map(one, ordered))
    for q, traj, failure in outcomes:
        if traj is not None:
            result.trajectories.append(traj)
        if failure is not None:
            result.failures.append(failure)
    return result


def judge_correct(trajs: Sequence[Trajectory], judge: Judge) -> list[int]:
    out = []
    for t in trajs:
        ref = t.query.reference_answer
        out.append(judge.correctness(t.query.text, ref, t.final_answer or "") if ref is not None else 0)
    return out


def score_all(
    trajs: Sequence[Trajectory],
    samples: Sequence[Query],
    judge: Judge,
) -> tuple[list[dict], dict, list[str]]:
    """Rewards per trajectory (eval-set references win over logged ones) plus a run summary."""
    by_id = {q.id: q for q in samples}
    rows, breakdowns, scored, errors = [], [], [], []
    for traj in trajs:
        sample = by_id.get(traj.query.id)
        if sample is not None:
            traj.query = sample
        try:
            b: RewardBreakdown = score_trajectory(traj, judge)
        except (ValueError, JudgeFailure) as e:
            errors.append(f"{traj.query.id}: {e}")
            continue
        rows.append({"id": traj.query.id, **b.to_dict()})
        breakdowns.append(b)
        scored.append(traj)
    summary = summarize(scored, breakdowns, judge_correct(scored, judge))
    return rows, summary, errors


def write_jsonl(path: str | Path, rows: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")


def write_json(path: str | Path, obj: dict) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass
class SftResult:
    trajectories: list[Trajectory]
    report: list[dict]


def build_sft(
    trajs: Sequence[Trajectory],
    samples: Sequence[Query],
    manifest: CorpusManifest,
    judge: Judge,
    verification: dict[str, dict] | None = None,
    seed: int = 0,
    max_searches: int = 10,
    templates: PromptTemplateSet | None = None,
    displayed_space: tuple[int, int] = (1000, 1000),
) -> SftResult:
    """Filter trajectories, then augment the accepted ones that have verification reasoning.

    ``verification`` maps query id to ``{"reasoning": str, "page_id": str?}``;
    without a page id one unseen page of the same document is drawn.
    """
    by_id = {q.id: q for q in samples}
    pages = manifest.pages()
    documents = manifest.document_of()
    ordered_pages = [pages[e.page_id] for e in manifest.entries]
    out: list[Trajectory] = []
    report: list[dict] = []
    for traj in trajs:
        sample = by_id.get(traj.query.id, traj.query)
        row = {"id": traj.query.id, "accepted": False, "rejections": "", "augmented": False, "note": ""}
        report.append(row)
        if not sample.reference_pages or sample.reference_answer is None:
            row["note"] = "missing references"
            continue
        traj.query = sample
        verdict = sft_filter(traj, sample.reference_pages, sample.reference_answer, max_searches, judge, displayed_space)
        row["rejections"] = ";".join(r.value for r in verdict.rejections)
        if not verdict.accepted:
            continue
        row["accepted"] = True
        if verification is None:
            out.append(traj)
            continue
        spec = verification.get(traj.query.id)
        if spec is None:
            row["note"] = "no verification reasoning"
            continue
        try:
            if spec.get("page_id"):
                page = pages[spec["page_id"]]
            else:
                page = pick_verification_page(traj, ordered_pages, documents, random.Random(derive_seed(seed, traj.query.id)))
            out.append(sft_augment(traj, spec["reasoning"], page, templates))
            row["augmented"] = True
        except (AugmentError, KeyError) as e:
            row["note"] = f"{type(e).__name__}: {e}"
    return SftResult(out, report)


def write_report_csv(path: str | Path, rows: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["id", "accepted", "rejections", "augmented", "note"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def load_components(cfg: RunConfig) -> tuple[CorpusManifest | None, PageImages | None, PromptTemplateSet]:
    manifest = CorpusManifest.load(cfg.manifest_path) if cfg.manifest_path else None
    images = PageImages(manifest, cfg.loop.crop_output_size) if manifest else None
    templates = PromptTemplateSet.load(cfg.template_dir, cfg.template_variant)
    return manifest, images, templates

