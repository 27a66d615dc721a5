"""Workload generation and trace file IO.

Workloads are either sampled (Poisson or sequential arrivals, lengths and
hidden truths drawn per a spec) or replayed from a line-delimited trace
file, one JSON record per query.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .types import ConfigError, QueryRecord, TrueProfile


class ArrivalMode(str, Enum):
    POISSON = "poisson"
    SEQUENTIAL = "sequential"
    TRACE = "trace"


@dataclass(frozen=True)
class ArrivalSpec:
    mode: ArrivalMode
    rate_per_sec: float = 2.0

    def __post_init__(self) -> None:
        if self.mode is ArrivalMode.POISSON and self.rate_per_sec <= 0:
            raise ValueError("Poisson rate must be positive")


@dataclass(frozen=True)
class LengthProfile:
    """Input and output token ranges, sampled uniformly."""

    input_range: tuple[int, int]
    output_range: tuple[int, int]

    def __post_init__(self) -> None:
        for lo, hi in (self.input_range, self.output_range):
            if lo <= 0 or lo > hi:
                raise ValueError("length ranges must be positive and non-empty")

    @property
    def out_budget(self) -> int:
        return self.output_range[1]


# Length profiles for common task shapes, by input/output token ranges.
DATASET_PROFILES: dict[str, LengthProfile] = {
    "single_hop_qa": LengthProfile((400, 2000), (5, 10)),
    "multihop_qa": LengthProfile((1000, 5000), (5, 20)),
    "doc_level_qa": LengthProfile((4000, 10000), (20, 40)),
    "summarization_qa": LengthProfile((4000, 12000), (20, 60)),
}


@dataclass(frozen=True)
class TruthDistribution:
    """Sampling parameters for hidden true profiles."""

    p_joint: float = 0.5
    p_complex_given_joint: float = 0.6
    p_complex_given_simple: float = 0.1
    pieces_range_joint: tuple[int, int] = (2, 10)
    pieces_range_simple: tuple[int, int] = (1, 3)
    summary_range: tuple[int, int] = (60, 180)

    def sample(self, rng: random.Random) -> TrueProfile:
        joint = rng.random() < self.p_joint
        p_complex = self.p_complex_given_joint if joint else self.p_complex_given_simple
        pieces_range = self.pieces_range_joint if joint else self.pieces_range_simple
        return TrueProfile(
            needs_joint_reasoning=joint,
            complexity_high=rng.random() < p_complex,
            pieces_required=rng.randint(*pieces_range),
            required_summary_len=rng.randint(*self.summary_range),
        )


@dataclass(frozen=True)
class WorkloadSpec:
    num_queries: int
    arrival: ArrivalSpec
    length_profile: LengthProfile
    truth_distribution: TruthDistribution = TruthDistribution()

    def __post_init__(self) -> None:
        if self.num_queries <= 0:
            raise ValueError("num_queries must be positive")


@dataclass(frozen=True)
class Workload:
    """Concrete queries with arrival times.

    With sequential=True the recorded arrival times are placeholders; the
    simulator injects each query when the previous one completes.
    """

    queries: tuple[QueryRecord, ...]
    arrivals: tuple[float, ...]
    sequential: bool = False


def gen_workload(spec: WorkloadSpec, seed: int) -> Workload:
    """Sample a workload deterministically from its spec and a seed."""
    rng = random.Random(seed)
    queries: list[QueryRecord] = []
    arrivals: list[float] = []
    t = 0.0
    for i in range(spec.num_queries):
        if spec.arrival.mode is ArrivalMode.POISSON:
            t += rng.expovariate(spec.arrival.rate_per_sec)
            arrivals.append(t)
        else:
            arrivals.append(0.0)
        truth = spec.truth_distribution.sample(rng)
        lo, hi = spec.length_profile.input_range
        queries.append(
            QueryRecord(
                id=f"q{i:05d}",
                text=f"synthetic query {i}",
                query_token_len=rng.randint(lo, hi),
                hidden_truth=truth,
            )
        )
    return Workload(
        queries=tuple(queries),
        arrivals=tuple(arrivals),
        sequential=spec.arrival.mode is ArrivalMode.SEQUENTIAL,
    )


def _record_to_dict(q: QueryRecord, arrival: float) -> dict:
    rec: dict = {
        "id": q.id,
        "text": q.text,
        "query_token_len": q.query_token_len,
        "arrival_offset_secs": arrival,
    }
    if q.ground_truth is not None:
        rec["ground_truth"] = q.ground_truth
    if q.hidden_truth is not None:
        t = q.hidden_truth
        rec.update(
            needs_joint_reasoning=t.needs_joint_reasoning,
            complexity_high=t.complexity_high,
            pieces_required=t.pieces_required,
            required_summary_len=t.required_summary_len,
        )
    return rec


_TRACE_KEYS = {
    "id",
    "text",
    "query_token_len",
    "arrival_offset_secs",
    "ground_truth",
    "needs_joint_reasoning",
    "complexity_high",
    "pieces_required",
    "required_summary_len",
}
_TRUTH_KEYS = (
    "needs_joint_reasoning",
    "complexity_high",
    "pieces_required",
    "required_summary_len",
)


def save_trace(workload: Workload, path: str | Path) -> None:
    """Write one JSON record per query, UTF-8, arrival offsets included."""
    with open(path, "w", encoding="utf-8") as fh:
        for q, arrival in zip(workload.queries, workload.arrivals):
            fh.write(json.dumps(_record_to_dict(q, arrival), sort_keys=True) + "\n")


def load_trace(path: str | Path) -> Workload:
    """Read a trace file back into a workload, sorted by arrival offset."""
    rows: list[tuple[float, QueryRecord]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
            unknown = set(rec) - _TRACE_KEYS
            if unknown:
                raise ConfigError(f"{path}:{lineno}: unknown trace fields {sorted(unknown)}")
            for key in ("text", "query_token_len", "arrival_offset_secs"):
                if key not in rec:
                    raise ConfigError(f"{path}:{lineno}: missing required field {key!r}")
            truth = None
            present = [k for k in _TRUTH_KEYS if k in rec]
            if present:
                if len(present) != len(_TRUTH_KEYS):
                    raise ConfigError(
                        f"{path}:{lineno}: partial true-profile fields {present}"
                    )
                truth = TrueProfile(
                    needs_joint_reasoning=bool(rec["needs_joint_reasoning"]),
                    complexity_high=bool(rec["complexity_high"]),
                    pieces_required=int(rec["pieces_required"]),
                    required_summary_len=int(rec["required_summary_len"]),
                )
            q = QueryRecord(
                id=str(rec.get("id", f"q{lineno - 1:05d}")),
                text=str(rec["text"]),
                query_token_len=int(rec["query_token_len"]),
                ground_truth=rec.get("ground_truth"),
                hidden_truth=truth,
            )
            rows.append((float(rec["arrival_offset_secs"]), q))
    if not rows:
        raise ConfigError(f"trace file {path} holds no records")
    rows.sort(key=lambda r: r[0])
    return Workload(
        queries=tuple(q for _, q in rows),
        arrivals=tuple(t for t, _ in rows),
        sequential=False,
    )
