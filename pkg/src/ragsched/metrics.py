"""Report schema, token-level F1, and delay/throughput aggregation.

Percentiles use the nearest-rank definition (no interpolation) so golden
files are bit-stable across platforms.
"""

from __future__ import annotations

import json
import math
import string
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path


class EmptyReport(ValueError):
    """Aggregation was asked for over zero query results."""


@dataclass(frozen=True)
class QueryResult:
    """One completed query."""

    query_id: str
    arrival_time: float
    completed_time: float
    delay: float
    method: str
    num_chunks: int
    intermediate_length: int | None
    is_fallback: bool
    gate_fallback: bool
    confidence: float
    quality: float
    profiler_latency: float

    @property
    def profiler_fraction(self) -> float:
        return self.profiler_latency / self.delay if self.delay > 0 else 0.0


@dataclass(frozen=True)
class SimReport:
    """Per-query outcomes of one run plus the scheduler's trace records."""

    policy: str
    seed: int
    capacity_bytes: int
    results: list[QueryResult]
    trace: list[dict]
    window_peak: int = 0
    ledger_peak: int = 0
    feedback_counters: tuple[int, ...] = ()


@dataclass(frozen=True)
class SummaryStats:
    policy: str
    num_queries: int
    mean_delay: float
    p50_delay: float
    p95_delay: float
    p99_delay: float
    max_delay: float
    throughput_qps: float
    mean_quality: float
    fallback_rate: float
    gate_fallback_rate: float
    profiler_fraction_mean: float
    profiler_fraction_max: float
    makespan: float


_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


def _tokenize(text: str) -> list[str]:
    return text.lower().translate(_PUNCT_TABLE).split()


def f1_score(prediction: str, truth: str) -> float:
    """Token-level F1: harmonic mean of multiset precision and recall over
    lowercased, punctuation-stripped, whitespace-split tokens. Zero when
    either side is empty or nothing overlaps."""
    pred = _tokenize(prediction)
    ref = _tokenize(truth)
    if not pred or not ref:
        return 0.0
    overlap = sum((Counter(pred) & Counter(ref)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(ref)
    return 2 * precision * recall / (precision + recall)


def nearest_rank_percentile(values: list[float], pct: float) -> float:
    """Smallest value with at least pct percent of the sample at or below it."""
    if not values:
        raise EmptyReport("percentile of an empty sample")
    if not 0 < pct <= 100:
        raise ValueError(f"pct must be in (0, 100], got {pct}")
    ordered = sorted(values)
    rank = max(1, math.ceil(pct / 100.0 * len(ordered)))
    return ordered[rank - 1]


def summarize(report: SimReport) -> SummaryStats:
    """Aggregate a report: nearest-rank delay percentiles, throughput over
    the makespan, mean quality, fallback rates, and the profiler-delay
    fraction distribution."""
    rows = report.results
    if not rows:
        raise EmptyReport(f"report for policy {report.policy!r} holds no results")
    delays = [r.delay for r in rows]
    fractions = [r.profiler_fraction for r in rows]
    makespan = max(r.completed_time for r in rows) - min(r.arrival_time for r in rows)
    n = len(rows)
    return SummaryStats(
        policy=report.policy,
        num_queries=n,
        mean_delay=sum(delays) / n,
        p50_delay=nearest_rank_percentile(delays, 50),
        p95_delay=nearest_rank_percentile(delays, 95),
        p99_delay=nearest_rank_percentile(delays, 99),
        max_delay=max(delays),
        throughput_qps=n / makespan if makespan > 0 else 0.0,
        mean_quality=sum(r.quality for r in rows) / n,
        fallback_rate=sum(1 for r in rows if r.is_fallback) / n,
        gate_fallback_rate=sum(1 for r in rows if r.gate_fallback) / n,
        profiler_fraction_mean=sum(fractions) / n,
        profiler_fraction_max=max(fractions),
        makespan=makespan,
    )


# -- file formats -----------------------------------------------------------

SUMMARY_COLUMNS = (
    "policy",
    "mean_delay",
    "p50_delay",
    "p95_delay",
    "throughput_qps",
    "mean_quality",
    "fallback_rate",
)


def write_report(report: SimReport, path: str | Path) -> None:
    """Line-delimited report: one meta record, then one record per query."""
    with open(path, "w", encoding="utf-8") as fh:
        meta = {
            "type": "meta",
            "policy": report.policy,
            "seed": report.seed,
            "capacity_bytes": report.capacity_bytes,
        }
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
        for row in report.results:
            rec = {"type": "result", **asdict(row)}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_report(path: str | Path) -> SimReport:
    """Read a report file back (trace records are not part of the file)."""
    policy, seed, capacity = "unknown", 0, 0
    results: list[QueryResult] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            kind = rec.pop("type", "result")
            if kind == "meta":
                policy = rec.get("policy", policy)
                seed = rec.get("seed", seed)
                capacity = rec.get("capacity_bytes", capacity)
            elif kind == "result":
                results.append(QueryResult(**rec))
            else:
                raise EmptyReport(f"{path}:{lineno}: unknown record type {kind!r}")
    return SimReport(
        policy=policy, seed=seed, capacity_bytes=capacity, results=results, trace=[]
    )


def write_summary(stats: list[SummaryStats], path: str | Path) -> None:
    """Delimited summary table with a fixed, documented column order."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(SUMMARY_COLUMNS) + "\n")
        for s in stats:
            row = [
                s.policy,
                f"{s.mean_delay:.6f}",
                f"{s.p50_delay:.6f}",
                f"{s.p95_delay:.6f}",
                f"{s.throughput_qps:.6f}",
                f"{s.mean_quality:.6f}",
                f"{s.fallback_rate:.6f}",
            ]
            fh.write("\t".join(row) + "\n")


def write_trace(trace: list[dict], path: str | Path) -> None:
    """Scheduler admission/completion records, one JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in trace:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
