"""Joint configuration-scheduling core.

A single FIFO waiting queue feeds a continuously batched running set. For
each head query the scheduler best-fit-selects the pruned-space candidate
with the highest memory requirement that fits free memory, falling back to
a cheaper out-of-space config when nothing fits. Rerank and mapper calls
admit individually; stuff calls and reducers are atomic, and a reducer is
only admissible once all of its mappers completed.

One logical owner drives the scheduler; in simulation that owner is the
event loop, which makes admission traces fully deterministic.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .mapping import EnumGranularity, PrunedConfigSpace, QueryProfile, enumerate_candidates
from .memory import CallPlan, buffered_bytes, bytes_per_kv_token, plan_bytes, plan_calls
from .types import (
    DEFAULT_MAX_CHUNKS,
    DEFAULT_TEMPLATE_TOKENS,
    DatasetMeta,
    ModelSpec,
    QueryRecord,
    RagConfig,
    SynthesisMethod,
    TrueProfile,
)


class UnknownCall(KeyError):
    """Completion reported for a call the scheduler is not running."""


class MemorySafetyViolation(RuntimeError):
    """Admitted KV bytes exceeded capacity; accounting is broken."""


class SchedulingImpossible(RuntimeError):
    """The head query can never be admitted, even with all memory free."""


@dataclass(frozen=True)
class SchedulerParams:
    model: ModelSpec
    meta: DatasetMeta
    out_budget: int
    template_tokens: int = DEFAULT_TEMPLATE_TOKENS
    max_chunks: int = DEFAULT_MAX_CHUNKS
    granularity: EnumGranularity = EnumGranularity()
    # Fixed-config baselines disable the fallback: they admit their calls
    # incrementally as memory frees instead of adapting the config.
    allow_fallback: bool = True


@dataclass
class PendingQuery:
    """Waiting-queue entry with the gate metadata the report needs later."""

    query: QueryRecord
    space: PrunedConfigSpace
    arrival_time: float
    profile: QueryProfile | None = None
    truth: TrueProfile | None = None
    gate_fallback: bool = False
    confidence: float = 1.0
    profiler_latency: float = 0.0


@dataclass(frozen=True)
class Admission:
    """One query's scheduling decision."""

    query_id: str
    chosen_config: RagConfig
    admitted_calls: tuple[int, ...]
    deferred_calls: tuple[int, ...]
    is_fallback: bool


@dataclass(frozen=True)
class AdmittedCall:
    """A call that just entered the running batch."""

    query_id: str
    call_index: int
    prompt_tokens: int
    max_output_tokens: int
    kv_bytes: int


@dataclass(frozen=True)
class CompletionInfo:
    query_done: bool
    config: RagConfig
    is_fallback: bool
    newly_ready: tuple[int, ...]
    winning_rerank: int | None = None


@dataclass
class QueryRun:
    pending: PendingQuery
    config: RagConfig
    plan: CallPlan
    is_fallback: bool
    admission_time: float
    admitted: set[int] = field(default_factory=set)
    completed: set[int] = field(default_factory=set)
    rerank_confidences: dict[int, float] = field(default_factory=dict)

    def deferred(self) -> list[int]:
        return [i for i in range(len(self.plan.calls)) if i not in self.admitted]

    def ready(self, idx: int) -> bool:
        return self.plan.calls[idx].depends_on <= self.completed

    def fully_admitted(self) -> bool:
        return len(self.admitted) == len(self.plan.calls)

    def done(self) -> bool:
        return len(self.completed) == len(self.plan.calls)


def best_fit_select(
    space: PrunedConfigSpace,
    q: QueryRecord,
    free_bytes: int,
    *,
    model: ModelSpec,
    meta: DatasetMeta,
    out_budget: int,
    template_tokens: int = DEFAULT_TEMPLATE_TOKENS,
    granularity: EnumGranularity = EnumGranularity(),
) -> RagConfig | None:
    """Candidate with the largest whole-plan memory requirement that still
    fits free_bytes; None when even the smallest candidate exceeds it.

    Candidates are sorted ascending by requirement (stable over the grid
    order), so a reverse scan finds the best fit; byte ties resolve to the
    latest grid position.
    """
    per_tok = bytes_per_kv_token(model)

    def key(cfg: RagConfig) -> int:
        return plan_bytes(
            q.query_token_len, cfg, meta.chunk_size, per_tok, out_budget, template_tokens
        )

    candidates = enumerate_candidates(space, granularity, sort_key=key)
    for cfg in reversed(candidates):
        if key(cfg) <= free_bytes:
            return cfg
    return None


def fallback_config(
    profile: QueryProfile,
    q: QueryRecord,
    free_bytes: int,
    *,
    model: ModelSpec,
    meta: DatasetMeta,
    out_budget: int,
    template_tokens: int = DEFAULT_TEMPLATE_TOKENS,
    max_chunks: int = DEFAULT_MAX_CHUNKS,
) -> RagConfig | None:
    """Cheaper out-of-space config when nothing in the pruned space fits.

    Queries without joint reasoning take map_rerank with as many chunks as
    fit free memory; the rest take the largest stuff that fits. None means
    the query must stay queued (not even one chunk fits). Never map_reduce.
    """
    per_tok = bytes_per_kv_token(model)
    if not profile.needs_joint_reasoning:
        call = buffered_bytes(
            q.query_token_len + meta.chunk_size + template_tokens + out_budget, per_tok
        )
        k = min(free_bytes // call, max_chunks)
        if k < 1:
            return None
        return RagConfig(SynthesisMethod.MAP_RERANK, int(k))
    for k in range(max_chunks, 0, -1):
        cfg = RagConfig(SynthesisMethod.STUFF, k)
        if plan_bytes(
            q.query_token_len, cfg, meta.chunk_size, per_tok, out_budget, template_tokens
        ) <= free_bytes:
            return cfg
    return None


class Scheduler:
    """Owns the waiting queue, the running batch, and memory accounting."""

    def __init__(self, capacity_bytes: int, params: SchedulerParams) -> None:
        if capacity_bytes <= 0:
            raise ValueError("capacity_bytes must be positive")
        self.capacity_bytes = capacity_bytes
        self.params = params
        self.used_bytes = 0
        self.waiting: deque[PendingQuery] = deque()
        self.active: dict[str, QueryRun] = {}
        self.backlog_order: list[str] = []
        self.trace: list[dict] = []

    @property
    def free_bytes(self) -> int:
        return self.capacity_bytes - self.used_bytes

    def submit(self, pending: PendingQuery) -> None:
        self.waiting.append(pending)

    # -- admission ---------------------------------------------------------

    def _check_accounting(self) -> None:
        if not 0 <= self.used_bytes <= self.capacity_bytes:
            raise MemorySafetyViolation(
                f"used {self.used_bytes} outside [0, {self.capacity_bytes}]"
            )

    def _admit_call(
        self, run: QueryRun, idx: int, now: float, admitted: list[AdmittedCall], deferred: bool
    ) -> None:
        call = run.plan.calls[idx]
        self.used_bytes += call.kv_bytes
        self._check_accounting()
        run.admitted.add(idx)
        admitted.append(
            AdmittedCall(
                query_id=run.pending.query.id,
                call_index=idx,
                prompt_tokens=call.prompt_tokens,
                max_output_tokens=call.max_output_tokens,
                kv_bytes=call.kv_bytes,
            )
        )
        if deferred:
            self.trace.append(
                {
                    "event": "admit_deferred",
                    "t": now,
                    "query": run.pending.query.id,
                    "call": idx,
                    "kv_bytes": call.kv_bytes,
                }
            )

    def _admit_backlog(self, now: float, admitted: list[AdmittedCall]) -> bool:
        """Admit deferred work of already-scheduled queries, FIFO. Returns
        True when a ready unit did not fit, which blocks new admissions."""
        for qid in list(self.backlog_order):
            run = self.active[qid]
            for idx in run.deferred():
                call = run.plan.calls[idx]
                if not run.ready(idx):
                    continue
                if call.kv_bytes > self.free_bytes:
                    return True
                self._admit_call(run, idx, now, admitted, deferred=True)
            if run.fully_admitted():
                self.backlog_order.remove(qid)
        return False

    def _whole_bytes(self, q: QueryRecord, cfg: RagConfig) -> int:
        p = self.params
        return plan_bytes(
            q.query_token_len,
            cfg,
            p.meta.chunk_size,
            bytes_per_kv_token(p.model),
            p.out_budget,
            p.template_tokens,
        )

    def _build_plan(self, q: QueryRecord, cfg: RagConfig) -> CallPlan:
        p = self.params
        return plan_calls(
            q,
            cfg,
            p.meta,
            p.model,
            p.out_budget,
            template_tokens=p.template_tokens,
            max_chunks=p.max_chunks,
        )

    def _start_run(
        self,
        pending: PendingQuery,
        cfg: RagConfig,
        is_fallback: bool,
        now: float,
        admitted: list[AdmittedCall],
        *,
        admit_all_independent: bool,
    ) -> Admission:
        plan = self._build_plan(pending.query, cfg)
        run = QueryRun(
            pending=pending, config=cfg, plan=plan, is_fallback=is_fallback, admission_time=now
        )
        self.active[pending.query.id] = run
        for idx in plan.independent_calls():
            call = plan.calls[idx]
            if call.kv_bytes <= self.free_bytes:
                self._admit_call(run, idx, now, admitted, deferred=False)
            elif admit_all_independent:
                raise MemorySafetyViolation(
                    f"call {idx} of {pending.query.id} should fit after best-fit selection"
                )
        deferred = tuple(run.deferred())
        if deferred:
            self.backlog_order.append(pending.query.id)
        admission = Admission(
            query_id=pending.query.id,
            chosen_config=cfg,
            admitted_calls=tuple(sorted(run.admitted)),
            deferred_calls=deferred,
            is_fallback=is_fallback,
        )
        self.trace.append(
            {
                "event": "admission",
                "t": now,
                "query": pending.query.id,
                "config": cfg.describe(),
                "admitted": list(admission.admitted_calls),
                "deferred": list(admission.deferred_calls),
                "fallback": is_fallback,
            }
        )
        return admission

    def _try_admit_new(
        self, pending: PendingQuery, now: float, admitted: list[AdmittedCall]
    ) -> Admission | None:
        p = self.params
        q = pending.query
        cfg = best_fit_select(
            pending.space,
            q,
            self.free_bytes,
            model=p.model,
            meta=p.meta,
            out_budget=p.out_budget,
            template_tokens=p.template_tokens,
            granularity=p.granularity,
        )
        if cfg is not None:
            return self._start_run(
                pending, cfg, False, now, admitted, admit_all_independent=True
            )

        if p.allow_fallback:
            if pending.profile is None:
                raise SchedulingImpossible(
                    f"query {q.id} needs the fallback path but carries no profile"
                )
            fb = fallback_config(
                pending.profile,
                q,
                self.free_bytes,
                model=p.model,
                meta=p.meta,
                out_budget=p.out_budget,
                template_tokens=p.template_tokens,
                max_chunks=p.max_chunks,
            )
            if fb is not None:
                return self._start_run(
                    pending, fb, True, now, admitted, admit_all_independent=True
                )
            if self.used_bytes == 0:
                raise SchedulingImpossible(
                    f"query {q.id} cannot fit even with all memory free"
                )
            return None

        # Baseline path: the single fixed candidate admits incrementally.
        candidates = enumerate_candidates(pending.space, p.granularity)
        if len(candidates) != 1:
            raise SchedulingImpossible(
                "fallback is disabled but the space is not a single fixed config"
            )
        fixed = candidates[0]
        plan = self._build_plan(q, fixed)
        smallest = min(plan.calls[i].kv_bytes for i in plan.independent_calls())
        if smallest > self.capacity_bytes:
            raise SchedulingImpossible(
                f"fixed config {fixed.describe()} can never fit capacity for query {q.id}"
            )
        if smallest > self.free_bytes:
            return None
        return self._start_run(pending, fixed, False, now, admitted, admit_all_independent=False)

    def step(self, now: float) -> tuple[list[Admission], list[AdmittedCall]]:
        """Admit deferred work first, then new queries in FIFO order until
        the head cannot make progress."""
        admissions: list[Admission] = []
        admitted: list[AdmittedCall] = []
        blocked = self._admit_backlog(now, admitted)
        if not blocked:
            while self.waiting:
                adm = self._try_admit_new(self.waiting[0], now, admitted)
                if adm is None:
                    break
                self.waiting.popleft()
                admissions.append(adm)
        return admissions, admitted

    # -- completion --------------------------------------------------------

    def complete(
        self, query_id: str, call_index: int, now: float, rerank_confidence: float | None = None
    ) -> CompletionInfo:
        """Free a finished call's memory, track dependencies, and settle the
        query when its last call finishes (highest-confidence output wins
        for map_rerank)."""
        run = self.active.get(query_id)
        if run is None:
            raise UnknownCall(f"no active query {query_id}")
        if call_index not in run.admitted or call_index in run.completed:
            raise UnknownCall(f"call {call_index} of {query_id} is not running")
        call = run.plan.calls[call_index]
        self.used_bytes -= call.kv_bytes
        self._check_accounting()
        run.completed.add(call_index)
        if rerank_confidence is not None:
            run.rerank_confidences[call_index] = rerank_confidence
        self.trace.append(
            {"event": "completion", "t": now, "query": query_id, "call": call_index}
        )

        newly_ready = tuple(
            i
            for i in run.deferred()
            if run.ready(i) and not (run.plan.calls[i].depends_on <= (run.completed - {call_index}))
        )

        if not run.done():
            return CompletionInfo(
                query_done=False,
                config=run.config,
                is_fallback=run.is_fallback,
                newly_ready=newly_ready,
            )

        winning = None
        if run.config.synthesis_method is SynthesisMethod.MAP_RERANK and run.rerank_confidences:
            winning = max(
                sorted(run.rerank_confidences), key=lambda i: run.rerank_confidences[i]
            )
        del self.active[query_id]
        if query_id in self.backlog_order:
            self.backlog_order.remove(query_id)
        self.trace.append(
            {"event": "query_done", "t": now, "query": query_id, "winning_rerank": winning}
        )
        return CompletionInfo(
            query_done=True,
            config=run.config,
            is_fallback=run.is_fallback,
            newly_ready=newly_ready,
            winning_rerank=winning,
        )

    def idle(self) -> bool:
        return not self.waiting and not self.active
