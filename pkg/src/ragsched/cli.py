"""Operator surface: run simulations, sweep fixed-config baselines against
the adaptive policy, profile single queries, and re-summarize reports.

Exit codes: 0 success, 2 configuration error, 3 estimator unavailable,
4 I/O error, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import sim
from .config import RunConfig, load_run_config, parse_grid_entry
from .mapping import map_profile
from .metrics import EmptyReport, load_report, summarize, write_report, write_summary, write_trace
from .profiler import (
    EstimatorUnavailable,
    MockEstimator,
    QueryProfiler,
    RemoteEstimator,
    UnparseableAnswer,
)
from .types import ConfigError, DatasetMeta, QueryRecord, TrueProfile

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_ESTIMATOR = 3
EXIT_IO = 4


def _pipeline_params(cfg: RunConfig, fixed=None, policy_name=None) -> sim.PipelineParams:
    return sim.PipelineParams(
        meta=cfg.meta,
        out_budget=cfg.out_budget,
        template_tokens=cfg.scheduler.template_tokens,
        max_chunks=cfg.scheduler.max_chunks,
        granularity=cfg.scheduler.granularity,
        gate_threshold=cfg.profiler.threshold,
        noise=cfg.profiler.noise,
        profiler_seed=cfg.profiler.seed,
        default_space=cfg.scheduler.default_fallback_space,
        fixed_config=fixed,
        policy_name=policy_name,
    )


def _ensure_parent(path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def _run_one(cfg: RunConfig, fixed=None) -> sim.SimReport:
    workload = cfg.build_workload()
    return sim.run(
        workload,
        cfg.model,
        cfg.capacity_bytes,
        cfg.cost,
        cfg.quality,
        cfg.seed,
        _pipeline_params(cfg, fixed=fixed),
    )


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, _overrides(args))
    if cfg.profiler.mode != "mock":
        raise ConfigError("simulate requires profiler.mode 'mock'; remote profiling is for 'profile'")
    report = _run_one(cfg)
    stats = summarize(report)
    _ensure_parent(cfg.output.report)
    write_report(report, cfg.output.report)
    _ensure_parent(cfg.output.summary)
    write_summary([stats], cfg.output.summary)
    if cfg.output.trace_log:
        _ensure_parent(cfg.output.trace_log)
        write_trace(report.trace, cfg.output.trace_log)
    print(f"simulated {stats.num_queries} queries under policy {stats.policy!r}")
    print(f"  mean delay {stats.mean_delay:.3f}s  p95 {stats.p95_delay:.3f}s")
    print(f"  throughput {stats.throughput_qps:.3f} q/s  mean quality {stats.mean_quality:.3f}")
    print(f"report: {cfg.output.report}")
    print(f"summary: {cfg.output.summary}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, _overrides(args))
    if cfg.profiler.mode != "mock":
        raise ConfigError("sweep requires profiler.mode 'mock'")
    grid = cfg.sweep_grid
    if args.grid is not None:
        entries = json.loads(args.grid)
        grid = tuple(parse_grid_entry(e) for e in entries)

    stats = []
    adaptive = summarize(_run_one(cfg))
    stats.append(adaptive)
    for fixed in grid:
        stats.append(summarize(_run_one(cfg, fixed=fixed)))
    _ensure_parent(cfg.output.summary)
    write_summary(stats, cfg.output.summary)
    print(f"{'policy':<24}{'mean_quality':>14}{'mean_delay':>12}")
    for s in stats:
        print(f"{s.policy:<24}{s.mean_quality:>14.3f}{s.mean_delay:>12.3f}")
    print(f"frontier table: {cfg.output.summary}")
    return EXIT_OK


def _parse_summary_range(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition("-")
    return int(lo), int(hi)


def cmd_profile(args: argparse.Namespace) -> int:
    if args.config:
        cfg = load_run_config(args.config)
        meta = cfg.meta
        profiler_cfg = cfg.profiler
        max_chunks = cfg.scheduler.max_chunks
        default_space = cfg.scheduler.default_fallback_space
    else:
        cfg = RunConfig()
        meta = cfg.meta
        profiler_cfg = cfg.profiler
        max_chunks = cfg.scheduler.max_chunks
        default_space = cfg.scheduler.default_fallback_space
    if args.meta:
        raw = json.loads(Path(args.meta).read_text(encoding="utf-8"))
        unknown = set(raw) - {"description", "chunk_size"}
        if unknown:
            raise ConfigError(f"unknown keys in meta file: {sorted(unknown)}")
        meta = DatasetMeta(**raw)

    truth = None
    if profiler_cfg.mode == "mock":
        lo, hi = _parse_summary_range(args.summary_range)
        truth = TrueProfile(
            needs_joint_reasoning=args.joint == "yes",
            complexity_high=args.complexity == "high",
            pieces_required=args.pieces,
            required_summary_len=lo,
        )
        estimator = MockEstimator(profiler_cfg.noise, seed=profiler_cfg.seed or 0)
    else:
        estimator = RemoteEstimator(
            profiler_cfg.endpoint,
            model=profiler_cfg.model_name,
            timeout_secs=profiler_cfg.timeout_secs,
        )

    q = QueryRecord(
        id="cli-query",
        text=args.query,
        query_token_len=max(1, len(args.query.split())),
        hidden_truth=truth,
    )
    profiler = QueryProfiler(
        estimator,
        threshold=profiler_cfg.threshold,
        default_space=default_space,
        max_chunks=max_chunks,
    )
    out = profiler.profile_query(q, meta)
    decision = profiler.gate(out)
    p = out.profile
    print(f"raw answer:\n{out.raw_text}")
    print(f"complexity: {'High' if p.complexity_high else 'Low'}")
    print(f"joint reasoning: {'Yes' if p.needs_joint_reasoning else 'No'}")
    print(f"pieces required: {p.pieces_required}")
    print(f"summary range: {p.summary_len_range.low}-{p.summary_len_range.high}")
    print(f"confidence: {p.confidence:.4f}  (per field: {out.per_field_confidence})")
    if out.clamped_fields:
        print(f"clamped fields: {sorted(out.clamped_fields)}")
    print(f"gate: {'recent-window fallback' if decision.used_fallback else 'profile accepted'}")
    space = decision.space if decision.used_fallback else map_profile(p, max_chunks)
    methods = ", ".join(m.value for m in space.methods_ordered())
    print(f"pruned space: methods {{{methods}}}, chunks "
          f"[{space.num_chunks_range.low}, {space.num_chunks_range.high}]"
          + (
              f", intermediate length [{space.intermediate_length_range.low}, "
              f"{space.intermediate_length_range.high}]"
              if space.intermediate_length_range
              else ""
          ))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    report = load_report(args.report)
    stats = summarize(report)
    if args.summary:
        _ensure_parent(args.summary)
        write_summary([stats], args.summary)
        print(f"summary: {args.summary}")
    for name in (
        "policy",
        "num_queries",
        "mean_delay",
        "p50_delay",
        "p95_delay",
        "p99_delay",
        "throughput_qps",
        "mean_quality",
        "fallback_rate",
        "gate_fallback_rate",
        "profiler_fraction_mean",
        "profiler_fraction_max",
    ):
        print(f"{name}: {getattr(stats, name)}")
    return EXIT_OK


def _overrides(args: argparse.Namespace) -> dict:
    return {
        "seed": getattr(args, "seed", None),
        "num_queries": getattr(args, "num_queries", None),
        "capacity_bytes": getattr(args, "capacity_bytes", None),
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragsched",
        description="Per-query RAG configuration control with memory-aware scheduling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim_p = sub.add_parser("simulate", help="run the full adaptive pipeline in simulation")
    sim_p.add_argument("config", help="run configuration JSON file")
    sim_p.add_argument("--seed", type=int, help="override the run seed")
    sim_p.add_argument("--num-queries", type=int, dest="num_queries")
    sim_p.add_argument("--capacity-bytes", type=int, dest="capacity_bytes")
    sim_p.set_defaults(func=cmd_simulate)

    sweep_p = sub.add_parser(
        "sweep", help="run fixed-config baselines plus the adaptive policy"
    )
    sweep_p.add_argument("config")
    sweep_p.add_argument(
        "--grid",
        help='JSON list of fixed configs, e.g. \'[{"method": "stuff", "num_chunks": 5}]\'',
    )
    sweep_p.add_argument("--seed", type=int)
    sweep_p.add_argument("--num-queries", type=int, dest="num_queries")
    sweep_p.add_argument("--capacity-bytes", type=int, dest="capacity_bytes")
    sweep_p.set_defaults(func=cmd_sweep)

    prof_p = sub.add_parser("profile", help="profile one query and show its pruned space")
    prof_p.add_argument("query", help="query text")
    prof_p.add_argument("--config", help="run configuration JSON file")
    prof_p.add_argument("--meta", help="dataset meta JSON file (description, chunk_size)")
    prof_p.add_argument("--joint", choices=("yes", "no"), default="no",
                        help="mock truth: joint reasoning needed")
    prof_p.add_argument("--complexity", choices=("high", "low"), default="low",
                        help="mock truth: query complexity")
    prof_p.add_argument("--pieces", type=int, default=1, help="mock truth: pieces required")
    prof_p.add_argument("--summary-range", default="60-120", dest="summary_range",
                        help="mock truth: required summary length range, LO-HI")
    prof_p.set_defaults(func=cmd_profile)

    rep_p = sub.add_parser("report", help="re-summarize an existing report file")
    rep_p.add_argument("report", help="report JSONL file")
    rep_p.add_argument("--summary", help="also write a summary table here")
    rep_p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, EmptyReport, UnparseableAnswer, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EstimatorUnavailable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # invariant violations and bugs
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
