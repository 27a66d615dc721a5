"""Discrete-event simulator: drives queries through profiling, gating,
scheduling, and execution under a linear latency cost model, and scores
each response with a synthetic quality oracle.

The loop is strictly single-threaded; all randomness comes from one seeded
generator, so identical inputs give bit-identical reports.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass

from .mapping import EnumGranularity, PrunedConfigSpace
from .memory import CallKind
from .metrics import QueryResult, SimReport
from .profiler import (
    DEFAULT_FALLBACK_SPACE,
    GATE_THRESHOLD,
    GOLDEN_CONFIG,
    MockEstimator,
    NoiseParams,
    QueryProfiler,
    profile_from_truth,
)
from .scheduler import PendingQuery, Scheduler, SchedulerParams
from .types import (
    DEFAULT_MAX_CHUNKS,
    DEFAULT_TEMPLATE_TOKENS,
    ConfigError,
    DatasetMeta,
    IntRange,
    ModelSpec,
    RagConfig,
    SynthesisMethod,
    TrueProfile,
)
from .workload import Workload


@dataclass(frozen=True)
class CostModel:
    """Linear latency model: per-token prefill, per-token decode with a
    dilation term per concurrently running sequence, plus a fixed profiler
    latency well under typical end-to-end delays."""

    prefill_secs_per_token: float = 1.0e-4
    decode_secs_per_token_base: float = 4.0e-3
    batch_slowdown_per_seq: float = 0.01
    profiler_latency_secs: float = 0.015

    def __post_init__(self) -> None:
        if self.prefill_secs_per_token <= 0 or self.decode_secs_per_token_base <= 0:
            raise ValueError("token rates must be positive")
        if self.batch_slowdown_per_seq < 0 or self.profiler_latency_secs < 0:
            raise ValueError("slowdown and profiler latency must be non-negative")


@dataclass(frozen=True)
class QualityModel:
    """Synthetic quality oracle.

    Penalties fire for answering a joint-reasoning query chunk-by-chunk,
    for retrieving fewer chunks than the pieces required, for retrieving
    far beyond what is useful, and for summaries shorter than required.
    Scores are clamped to [0, 1].
    """

    base: float = 0.9
    w_joint: float = 0.35
    w_under: float = 0.6
    w_over: float = 0.3
    w_len: float = 0.3
    noise_sigma: float = 0.02

    def __post_init__(self) -> None:
        if not 0.0 <= self.base <= 1.0:
            raise ValueError("base must be in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


def call_latency(call, concurrent_seqs: int, cost: CostModel) -> float:
    """Seconds to run one call given how many sequences already run."""
    prefill = cost.prefill_secs_per_token * call.prompt_tokens
    decode = (
        call.max_output_tokens
        * cost.decode_secs_per_token_base
        * (1.0 + cost.batch_slowdown_per_seq * concurrent_seqs)
    )
    return prefill + decode


def quality_of(
    cfg: RagConfig,
    truth: TrueProfile,
    quality: QualityModel,
    rng: random.Random,
    max_chunks: int = DEFAULT_MAX_CHUNKS,
) -> float:
    """Score one answered query against its hidden truth."""
    score = quality.base
    if truth.needs_joint_reasoning and cfg.synthesis_method is SynthesisMethod.MAP_RERANK:
        score -= quality.w_joint
    pieces = truth.pieces_required
    score -= quality.w_under * max(0, pieces - cfg.num_chunks) / pieces
    score -= quality.w_over * max(0, cfg.num_chunks - 3 * pieces) / max_chunks
    if cfg.synthesis_method is SynthesisMethod.MAP_REDUCE:
        interlen = cfg.intermediate_length or 0
        required = truth.required_summary_len
        score -= quality.w_len * max(0, required - interlen) / required
    if quality.noise_sigma > 0:
        score += rng.gauss(0.0, quality.noise_sigma)
    return min(1.0, max(0.0, score))


def singleton_space(cfg: RagConfig) -> PrunedConfigSpace:
    """Degenerate space holding exactly one fixed config."""
    interlen = None
    if cfg.synthesis_method is SynthesisMethod.MAP_REDUCE:
        interlen = IntRange(cfg.intermediate_length, cfg.intermediate_length)
    return PrunedConfigSpace(
        frozenset({cfg.synthesis_method}), IntRange(cfg.num_chunks, cfg.num_chunks), interlen
    )


@dataclass(frozen=True)
class PipelineParams:
    """Everything the pipeline needs beyond the workload and the models."""

    meta: DatasetMeta
    out_budget: int = 10
    template_tokens: int = DEFAULT_TEMPLATE_TOKENS
    max_chunks: int = DEFAULT_MAX_CHUNKS
    granularity: EnumGranularity = EnumGranularity()
    gate_threshold: float = GATE_THRESHOLD
    noise: NoiseParams = NoiseParams()
    profiler_seed: int | None = None
    default_space: PrunedConfigSpace = DEFAULT_FALLBACK_SPACE
    # When set, every query runs this config: no profiler, no mapping, no
    # fallback; calls admit incrementally as memory frees (baseline mode).
    fixed_config: RagConfig | None = None
    policy_name: str | None = None


_ARRIVAL, _PROFILED, _CALL_DONE = 0, 1, 2


def run(
    workload: Workload,
    model: ModelSpec,
    capacity_bytes: int,
    cost: CostModel,
    quality: QualityModel,
    seed: int,
    params: PipelineParams,
) -> SimReport:
    """Process every query through the full pipeline and report per-query
    delay, chosen config, and quality, plus scheduler trace records."""
    queries = workload.queries
    for q in queries:
        if q.hidden_truth is None:
            raise ConfigError(f"query {q.id} has no hidden truth; simulation needs one")
    index_of = {q.id: i for i, q in enumerate(queries)}
    if len(index_of) != len(queries):
        raise ConfigError("duplicate query ids in workload")

    fixed = params.fixed_config
    policy = params.policy_name or (fixed.describe() if fixed else "adaptive")
    rng = random.Random(seed)

    sched = Scheduler(
        capacity_bytes,
        SchedulerParams(
            model=model,
            meta=params.meta,
            out_budget=params.out_budget,
            template_tokens=params.template_tokens,
            max_chunks=params.max_chunks,
            granularity=params.granularity,
            allow_fallback=fixed is None,
        ),
    )
    profiler: QueryProfiler | None = None
    fixed_space: PrunedConfigSpace | None = None
    if fixed is None:
        estimator = MockEstimator(
            params.noise,
            seed=params.profiler_seed if params.profiler_seed is not None else seed + 1,
        )
        profiler = QueryProfiler(
            estimator,
            threshold=params.gate_threshold,
            default_space=params.default_space,
            max_chunks=params.max_chunks,
        )
    else:
        fixed_space = singleton_space(fixed)

    events: list[tuple[float, int, int, object]] = []
    seq = 0

    def push(t: float, kind: int, payload: object) -> None:
        nonlocal seq
        heapq.heappush(events, (t, seq, kind, payload))
        seq += 1

    if workload.sequential:
        if queries:
            push(0.0, _ARRIVAL, 0)
    else:
        for i, t in enumerate(workload.arrivals):
            push(t, _ARRIVAL, i)

    gate_meta: dict[str, tuple[bool, float, float, float]] = {}
    results: list[QueryResult] = []
    running = 0
    window_peak = 0
    ledger_peak = 0
    feedback_counters: list[int] = []

    def dispatch(now: float) -> None:
        nonlocal running
        _, admitted = sched.step(now)
        for ac in admitted:
            latency = call_latency(ac, running, cost)
            running += 1
            push(now + latency, _CALL_DONE, (ac.query_id, ac.call_index))

    while events:
        now, _, kind, payload = heapq.heappop(events)

        if kind == _ARRIVAL:
            i = payload
            q = queries[i]
            if fixed is None:
                push(now + cost.profiler_latency_secs, _PROFILED, (i, now))
            else:
                gate_meta[q.id] = (False, 1.0, now, 0.0)
                sched.submit(
                    PendingQuery(
                        query=q, space=fixed_space, arrival_time=now, truth=q.hidden_truth
                    )
                )
                dispatch(now)

        elif kind == _PROFILED:
            i, arrived = payload
            q = queries[i]
            assert profiler is not None
            out = profiler.profile_query(q, params.meta)
            decision = profiler.gate(out)
            profiler.record_feedback(
                q,
                golden_answer=f"[{GOLDEN_CONFIG.describe()}] reference answer for {q.id}",
                expected_profile=profile_from_truth(q.hidden_truth),
            )
            if profiler.ledger.query_counter % profiler.ledger.interval == 0:
                feedback_counters.append(profiler.ledger.query_counter)
            window_peak = max(window_peak, len(profiler.window))
            ledger_peak = max(ledger_peak, len(profiler.ledger.entries))
            gate_meta[q.id] = (decision.used_fallback, decision.confidence, arrived, now - arrived)
            sched.submit(
                PendingQuery(
                    query=q,
                    space=decision.space,
                    arrival_time=arrived,
                    profile=out.profile,
                    truth=q.hidden_truth,
                    gate_fallback=decision.used_fallback,
                    confidence=decision.confidence,
                    profiler_latency=now - arrived,
                )
            )
            dispatch(now)

        else:  # _CALL_DONE
            query_id, call_index = payload
            running -= 1
            run_obj = sched.active.get(query_id)
            conf = None
            if run_obj is not None and run_obj.plan.calls[call_index].kind is CallKind.RERANK:
                conf = rng.random()
            info = sched.complete(query_id, call_index, now, rerank_confidence=conf)
            if info.query_done:
                q_idx = index_of[query_id]
                q = queries[q_idx]
                used_gate_fallback, confidence, arrived, prof_lat = gate_meta[query_id]
                results.append(
                    QueryResult(
                        query_id=query_id,
                        arrival_time=arrived,
                        completed_time=now,
                        delay=now - arrived,
                        method=info.config.synthesis_method.value,
                        num_chunks=info.config.num_chunks,
                        intermediate_length=info.config.intermediate_length,
                        is_fallback=info.is_fallback,
                        gate_fallback=used_gate_fallback,
                        confidence=confidence,
                        quality=quality_of(
                            info.config, q.hidden_truth, quality, rng, params.max_chunks
                        ),
                        profiler_latency=prof_lat,
                    )
                )
                if workload.sequential and q_idx + 1 < len(queries):
                    push(now, _ARRIVAL, q_idx + 1)
            dispatch(now)

    if len(results) != len(queries):
        missing = len(queries) - len(results)
        raise ConfigError(f"simulation stalled with {missing} queries unfinished")

    return SimReport(
        policy=policy,
        seed=seed,
        capacity_bytes=capacity_bytes,
        results=results,
        trace=list(sched.trace),
        window_peak=window_peak,
        ledger_peak=ledger_peak,
        feedback_counters=tuple(feedback_counters),
    )
