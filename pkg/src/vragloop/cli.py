"""Command line entry point: index, run, score, sft-build, mask, simulate.

Exit codes: 0 success, 1 partial failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig
from .corpus import CorpusError, CorpusManifest, build_index, check_eval_set, load_embedder, read_eval_set
from .pipeline import (
    build_sft,
    load_components,
    make_judge,
    make_policy,
    run_samples,
    score_all,
    write_json,
    write_jsonl,
    write_report_csv,
)
from .metrics import summarize
from .retrieval import RetrievalError, read_index, write_index
from .trajectory import read_jsonl, write_jsonl as write_trajectories
from .training import EmptyTranscript, Segment, rl_mask_spans

log = logging.getLogger("vragloop")

OK, PARTIAL, CONFIG_ERROR = 0, 1, 2


def cmd_index(args: argparse.Namespace) -> int:
    manifest = CorpusManifest.load(args.manifest)
    embedder = load_embedder(args.embedder, args.dim, args.embed_seed)
    index = build_index(manifest, embedder)
    write_index(args.out, index)
    log.info("wrote %d pages (dim %d) to %s", len(index), index.dim, args.out)
    return OK


def _run_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return cfg.with_overrides(
        index_path=Path(args.index) if getattr(args, "index", None) else None,
        manifest_path=Path(args.manifest) if getattr(args, "manifest", None) else None,
        output_dir=Path(args.out) if getattr(args, "out", None) else None,
        seed=getattr(args, "seed", None),
        workers=getattr(args, "workers", None),
        max_turns=getattr(args, "max_turns", None),
        window_size=getattr(args, "window_size", None),
        top_k=getattr(args, "top_k", None),
    )


def run_eval(cfg: RunConfig, eval_path: Path, trace: Path | None = None) -> int:
    if cfg.index_path is None:
        raise ConfigError("no index path (config index_path or --index)")
    if not cfg.policy:
        raise ConfigError("no policy backend configured")
    index = read_index(cfg.index_path)
    samples = read_eval_set(eval_path)
    manifest, images, templates = load_components(cfg)
    if manifest is not None:
        for problem in check_eval_set(samples, manifest):
            log.warning("%s", problem)
    policy = make_policy(cfg.policy, images)
    judge = make_judge(cfg.judge)
    encoder = load_embedder(cfg.embedder, cfg.embed_dim, cfg.embed_seed)
    result = run_samples(samples, index, policy, cfg, encoder, templates,
                         manifest.pages() if manifest else None, images)

    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_trajectories(out / "trajectories.jsonl", result.trajectories)
    if judge is not None:
        rows, summary, errors = score_all(result.trajectories, samples, judge)
        write_jsonl(out / "rewards.jsonl", rows)
        result.failures.extend(errors)
    else:
        summary = summarize(result.trajectories)
    summary["failures"] = len(result.failures)
    write_json(out / "summary.json", summary)
    if trace is not None:
        write_jsonl(trace, [e.to_dict() for e in result.events])
    for f in result.failures:
        log.error("%s", f)
    log.info("%d trajectories written to %s", len(result.trajectories), out)
    return PARTIAL if result.failures or len(result.trajectories) < len(samples) else OK


def cmd_run(args: argparse.Namespace) -> int:
    return run_eval(_run_config(args), Path(args.eval), Path(args.trace) if args.trace else None)


def _judge_from(args: argparse.Namespace):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    spec = cfg.judge or ({"kind": args.judge} if args.judge else None)
    judge = make_judge(spec)
    if judge is None:
        raise ConfigError("no judge configured (config judge or --judge)")
    return cfg, judge


def cmd_score(args: argparse.Namespace) -> int:
    _, judge = _judge_from(args)
    trajs = list(read_jsonl(args.trajectories))
    samples = read_eval_set(args.eval)
    rows, summary, errors = score_all(trajs, samples, judge)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "rewards.jsonl", rows)
    write_json(out / "summary.json", summary)
    for e in errors:
        log.error("%s", e)
    return PARTIAL if errors else OK


def cmd_sft_build(args: argparse.Namespace) -> int:
    cfg, judge = _judge_from(args)
    _, _, templates = load_components(cfg)
    verification = None
    if args.verification:
        verification = {}
        for line in Path(args.verification).read_text(encoding="utf-8").splitlines():
            if line.strip():
                row = json.loads(line)
                verification[row["id"]] = row
    result = build_sft(
        list(read_jsonl(args.trajectories)),
        read_eval_set(args.eval),
        CorpusManifest.load(args.manifest),
        judge,
        verification,
        seed=args.seed if args.seed is not None else cfg.seed,
        max_searches=args.max_searches,
        templates=templates,
        displayed_space=cfg.loop.displayed_space,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectories(out / "sft.jsonl", result.trajectories)
    write_report_csv(out / "report.csv", result.report)
    log.info("%d of %d trajectories kept", len(result.trajectories), len(result.report))
    return OK


def cmd_mask(args: argparse.Namespace) -> int:
    rows, failures = [], 0
    with open(args.segments, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            record = json.loads(line)
            try:
                spans = rl_mask_spans([Segment(s["role"], s["length"]) for s in record["segments"]])
            except (EmptyTranscript, ValueError, KeyError) as e:
                log.error("line %d: %s", lineno, e)
                failures += 1
                continue
            rows.append({"id": record.get("id"), "spans": [s.to_dict() for s in spans]})
    write_jsonl(args.out, rows)
    return PARTIAL if failures else OK


def cmd_simulate(args: argparse.Namespace) -> int:
    from .synthetic import write_corpus

    out = Path(args.out)
    paths = write_corpus(out / "corpus")
    cfg = RunConfig.load(paths["config"])
    manifest = CorpusManifest.load(paths["manifest"])
    index_path = out / "index.vidx"
    write_index(index_path, build_index(manifest, load_embedder(cfg.embedder, cfg.embed_dim, cfg.embed_seed)))
    cfg = cfg.with_overrides(index_path=index_path, manifest_path=paths["manifest"], output_dir=out,
                             workers=args.workers)
    return run_eval(cfg, paths["eval"], Path(args.trace) if args.trace else None)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vragloop", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("index", help="embed a corpus manifest into an index file")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--embedder", default="hash", help="'hash' or module:factory")
    s.add_argument("--dim", type=int, default=256)
    s.add_argument("--embed-seed", type=int, default=0)
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("run", help="run the agent loop over an eval set")
    s.add_argument("--config")
    s.add_argument("--eval", required=True)
    s.add_argument("--index")
    s.add_argument("--manifest")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--max-turns", type=int)
    s.add_argument("--window-size", type=int)
    s.add_argument("--top-k", type=int)
    s.add_argument("--trace", help="write loop events as JSONL")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("score", help="score trajectories against an eval set")
    s.add_argument("--trajectories", required=True)
    s.add_argument("--eval", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--judge", choices=["scripted"], help="judge backend when no config is given")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("sft-build", help="filter and augment trajectories for SFT")
    s.add_argument("--trajectories", required=True)
    s.add_argument("--eval", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--verification", help="JSONL of {id, reasoning, page_id?}; omit to skip augmentation")
    s.add_argument("--config")
    s.add_argument("--judge", choices=["scripted"])
    s.add_argument("--seed", type=int)
    s.add_argument("--max-searches", type=int, default=10)
    s.set_defaults(func=cmd_sft_build)

    s = sub.add_parser("mask", help="segmented transcripts to loss-mask spans")
    s.add_argument("--segments", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("simulate", help="synthetic corpus, index, run and score in one go")
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--trace")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as e:
        log.error("%s", e)
        return CONFIG_ERROR
    except (CorpusError, RetrievalError) as e:
        log.error("%s", e)
        return PARTIAL


if __name__ == "__main__":
    sys.exit(main())
