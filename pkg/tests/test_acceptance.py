"""Acceptance suite: one test per criterion, each printing a pass/fail line
(see the 'acceptance criteria' section in the pytest summary)."""

import random
import time
from fractions import Fraction

import pytest

from ragsched.config import (
    DEFAULT_CAPACITY_BYTES,
    DEFAULT_META,
    DEFAULT_MODEL,
    DEFAULT_SWEEP_GRID,
)
from ragsched.mapping import (
    PrunedConfigSpace,
    QueryProfile,
    enumerate_candidates,
    map_profile,
)
from ragsched.memory import (
    AdmissionMode,
    buffered_bytes,
    bytes_per_kv_token,
    memory_requirement,
    plan_calls,
)
from ragsched.metrics import f1_score, summarize, write_report, write_summary, write_trace
from ragsched.profiler import ZERO_NOISE, NoiseParams, profile_from_truth
from ragsched.scheduler import (
    MemorySafetyViolation,
    PendingQuery,
    Scheduler,
    SchedulerParams,
    best_fit_select,
)
from ragsched.sim import CostModel, PipelineParams, QualityModel, run
from ragsched.types import (
    IntRange,
    QueryRecord,
    RagConfig,
    SynthesisMethod,
)
from ragsched.workload import (
    DATASET_PROFILES,
    ArrivalMode,
    ArrivalSpec,
    TruthDistribution,
    WorkloadSpec,
    gen_workload,
)

SEED = 42
N_QUERIES = 200
RATE = 2.0

MR = SynthesisMethod.MAP_RERANK
ST = SynthesisMethod.STUFF
MRD = SynthesisMethod.MAP_REDUCE


def workload(mode: ArrivalMode):
    return gen_workload(
        WorkloadSpec(
            num_queries=N_QUERIES,
            arrival=ArrivalSpec(mode, RATE),
            length_profile=DATASET_PROFILES["single_hop_qa"],
            truth_distribution=TruthDistribution(),
        ),
        SEED,
    )


def pipeline(fixed=None, noise=None):
    return PipelineParams(
        meta=DEFAULT_META,
        out_budget=10,
        fixed_config=fixed,
        noise=noise if noise is not None else NoiseParams(),
    )


def run_policy(mode, fixed=None, noise=None, seed=SEED):
    return run(
        workload(mode),
        DEFAULT_MODEL,
        DEFAULT_CAPACITY_BYTES,
        CostModel(),
        QualityModel(),
        seed,
        pipeline(fixed=fixed, noise=noise),
    )


@pytest.fixture(scope="module")
def poisson_grid():
    t0 = time.perf_counter()
    reports = {"adaptive": run_policy(ArrivalMode.POISSON)}
    for cfg in DEFAULT_SWEEP_GRID:
        reports[cfg.describe()] = run_policy(ArrivalMode.POISSON, fixed=cfg)
    return reports, time.perf_counter() - t0


@pytest.fixture(scope="module")
def sequential_grid():
    reports = {"adaptive": run_policy(ArrivalMode.SEQUENTIAL, noise=ZERO_NOISE)}
    for cfg in DEFAULT_SWEEP_GRID:
        reports[cfg.describe()] = run_policy(ArrivalMode.SEQUENTIAL, fixed=cfg)
    return reports


def whole_bytes(q, cfg):
    plan = plan_calls(q, cfg, DEFAULT_META, DEFAULT_MODEL, 10)
    return memory_requirement(plan, AdmissionMode.WHOLE)


# -- A1 ------------------------------------------------------------------------

def test_a1_rule_mapping_conformance(criterion):
    def table(joint, complex_, pieces, summary):
        methods = {
            (False, False): frozenset({MR}),
            (False, True): frozenset({MR}),
            (True, False): frozenset({ST}),
            (True, True): frozenset({ST, MRD}),
        }[(joint, complex_)]
        chunks = (min(max(pieces, 1), 35), min(max(3 * pieces, 1), 35))
        interlen = summary if MRD in methods else None
        return methods, chunks, interlen

    rng = random.Random(SEED)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(10_000):
        joint = rng.random() < 0.5
        complex_ = rng.random() < 0.5
        pieces = rng.randint(1, 10)
        lo = rng.randint(30, 200)
        hi = rng.randint(lo, 200)
        profile = QueryProfile(
            complexity_high=complex_,
            needs_joint_reasoning=joint,
            pieces_required=pieces,
            summary_len_range=IntRange(lo, hi),
            confidence=0.95,
        )
        space = map_profile(profile)
        methods, chunks, interlen = table(joint, complex_, pieces, (lo, hi))
        got_interlen = (
            None
            if space.intermediate_length_range is None
            else (space.intermediate_length_range.low, space.intermediate_length_range.high)
        )
        if (
            space.synthesis_methods != methods
            or (space.num_chunks_range.low, space.num_chunks_range.high) != chunks
            or got_interlen != interlen
        ):
            mismatches += 1
    elapsed = time.perf_counter() - t0
    criterion(
        "A1",
        "rule-mapping conformance (10k profiles)",
        mismatches == 0 and elapsed < 1.0,
        f"mismatches={mismatches}, elapsed={elapsed:.3f}s",
    )


# -- A2 ------------------------------------------------------------------------

def test_a2_best_fit_oracle_equivalence(criterion):
    rng = random.Random(SEED + 1)
    mismatches = 0
    none_cases = 0
    for trial in range(1000):
        profile = QueryProfile(
            complexity_high=rng.random() < 0.5,
            needs_joint_reasoning=rng.random() < 0.5,
            pieces_required=rng.randint(1, 10),
            summary_len_range=IntRange(*sorted((rng.randint(30, 200), rng.randint(30, 200)))),
            confidence=0.95,
        )
        space = map_profile(profile)
        q = QueryRecord(id=f"a2-{trial}", text="t", query_token_len=rng.randint(10, 3000))
        sizes = [whole_bytes(q, c) for c in enumerate_candidates(space)]
        lo, hi = min(sizes), max(sizes)
        free = rng.choice(
            [rng.randint(0, max(lo - 1, 0)), rng.randint(lo, hi), rng.randint(hi, 2 * hi)]
        )
        got = best_fit_select(
            space, q, free, model=DEFAULT_MODEL, meta=DEFAULT_META, out_budget=10
        )
        want, want_key = None, None
        for i, cfg in enumerate(enumerate_candidates(space)):
            b = whole_bytes(q, cfg)
            if b <= free and (want_key is None or (b, i) > want_key):
                want, want_key = cfg, (b, i)
        if want is None:
            none_cases += 1
        if got != want:
            mismatches += 1
    criterion(
        "A2",
        "best-fit equals exhaustive argmax (1000 cases)",
        mismatches == 0 and none_cases > 0,
        f"mismatches={mismatches}, none_fit_cases={none_cases}",
    )


# -- A3 ------------------------------------------------------------------------

def test_a3_adaptive_pareto_dominates_fixed_grid(criterion, poisson_grid):
    reports, elapsed = poisson_grid
    stats = {name: summarize(r) for name, r in reports.items()}
    adaptive = stats.pop("adaptive")
    failures = []
    for name, s in stats.items():
        quality_gap = adaptive.mean_quality - s.mean_quality
        delay_ratio = s.mean_delay / adaptive.mean_delay
        if not (quality_gap >= 0.03 or delay_ratio >= 1.3):
            failures.append(f"{name}: gap={quality_gap:.4f}, ratio={delay_ratio:.2f}")
    criterion(
        "A3",
        "adaptive Pareto-dominates the 9-point fixed grid",
        not failures and elapsed < 10.0,
        f"failures={failures}, elapsed={elapsed:.2f}s",
    )


# -- A4 ------------------------------------------------------------------------

def test_a4_memory_safety_and_buffer_exactness(criterion, poisson_grid):
    reports, _ = poisson_grid  # every run self-checks accounting at each event

    ok = bytes_per_kv_token(DEFAULT_MODEL) == 131072
    # the 2% buffer is integer-exact on every call of a representative plan
    q = QueryRecord(id="a4", text="t", query_token_len=777)
    for cfg in DEFAULT_SWEEP_GRID:
        plan = plan_calls(q, cfg, DEFAULT_META, DEFAULT_MODEL, 10)
        for call in plan.calls:
            raw = (call.prompt_tokens + call.max_output_tokens) * 131072
            ok = ok and call.kv_bytes == (102 * raw + 99) // 100
            ok = ok and 0 <= call.kv_bytes * 100 - 102 * raw < 100

    # the inline accounting guard actually fires when accounting is broken
    sched = Scheduler(1000, SchedulerParams(model=DEFAULT_MODEL, meta=DEFAULT_META, out_budget=10))
    sched.used_bytes = 1001
    guard_fires = False
    try:
        sched._check_accounting()
    except MemorySafetyViolation:
        guard_fires = True

    total_queries = sum(len(r.results) for r in reports.values())
    criterion(
        "A4",
        "memory safety inline checks and bit-exact 2% buffer",
        ok and guard_fires and total_queries == 10 * N_QUERIES,
        f"buffer_exact={ok}, guard_fires={guard_fires}",
    )


# -- A5 ------------------------------------------------------------------------

def test_a5_fallback_correctness(criterion):
    q = QueryRecord(id="a5", text="t", query_token_len=100)
    out_budget = 10
    per_tok = bytes_per_kv_token(DEFAULT_MODEL)
    rerank_call = buffered_bytes(100 + 1000 + 64 + out_budget, per_tok)
    details = []
    ok = True

    # joint reasoning not needed: map_rerank with the maximal fitting count
    space = PrunedConfigSpace(frozenset({ST, MRD}), IntRange(20, 30), IntRange(100, 200))
    capacity = 3 * rerank_call + rerank_call // 2
    sched = Scheduler(
        capacity, SchedulerParams(model=DEFAULT_MODEL, meta=DEFAULT_META, out_budget=out_budget)
    )
    profile = QueryProfile(
        complexity_high=True,
        needs_joint_reasoning=False,
        pieces_required=10,
        summary_len_range=IntRange(100, 200),
        confidence=0.95,
    )
    sched.submit(PendingQuery(query=q, space=space, arrival_time=0.0, profile=profile))
    admissions, _ = sched.step(0.0)
    adm = admissions[0]
    ok &= adm.is_fallback and adm.chosen_config == RagConfig(MR, 3)
    details.append(f"no-joint fallback -> {adm.chosen_config.describe()} (flag {adm.is_fallback})")

    # joint reasoning needed: largest stuff that fits, never map_reduce
    stuff3 = whole_bytes(q, RagConfig(ST, 3))
    stuff4 = whole_bytes(q, RagConfig(ST, 4))
    sched = Scheduler(
        stuff3 + (stuff4 - stuff3) // 2,
        SchedulerParams(model=DEFAULT_MODEL, meta=DEFAULT_META, out_budget=out_budget),
    )
    profile_joint = QueryProfile(
        complexity_high=True,
        needs_joint_reasoning=True,
        pieces_required=10,
        summary_len_range=IntRange(100, 200),
        confidence=0.95,
    )
    sched.submit(PendingQuery(query=q, space=space, arrival_time=0.0, profile=profile_joint))
    admissions, _ = sched.step(0.0)
    adm = admissions[0]
    ok &= adm.is_fallback and adm.chosen_config == RagConfig(ST, 3)
    ok &= adm.chosen_config.synthesis_method is not MRD
    details.append(f"joint fallback -> {adm.chosen_config.describe()} (flag {adm.is_fallback})")

    criterion("A5", "fallback picks maximal fitting cheap config", ok, "; ".join(details))


# -- A6 ------------------------------------------------------------------------

def test_a6_confidence_gate_and_bounded_state(criterion):
    # corrupt exactly one field with probability 0.1: every corrupted
    # profile carries confidence below the 0.90 gate
    report = run_policy(ArrivalMode.POISSON, noise=NoiseParams(0.1, 0.0, 0.0, 0.0))
    low_conf = [r.query_id for r in report.results if r.confidence < 0.90]
    fallbacks = [r.query_id for r in report.results if r.gate_fallback]
    ok = sorted(low_conf) == sorted(fallbacks)
    ok &= 0 < len(fallbacks) < N_QUERIES
    ok &= report.window_peak <= 10
    ok &= report.ledger_peak <= 4
    ok &= all(c % 30 == 0 for c in report.feedback_counters)
    ok &= list(report.feedback_counters) == [30, 60, 90, 120, 150, 180]
    criterion(
        "A6",
        "gate fallback exactly on low confidence; bounded window and ledger",
        bool(ok),
        f"low_conf={len(low_conf)}, fallbacks={len(fallbacks)}, "
        f"window_peak={report.window_peak}, ledger_peak={report.ledger_peak}, "
        f"feedback_at={list(report.feedback_counters)}",
    )


# -- A7 ------------------------------------------------------------------------

def test_a7_f1_matches_brute_force(criterion):
    def brute(pred, truth):
        p, t = pred.lower().split(), truth.lower().split()
        if not p or not t:
            return Fraction(0)
        remaining = list(t)
        overlap = 0
        for tok in p:
            if tok in remaining:
                remaining.remove(tok)
                overlap += 1
        if overlap == 0:
            return Fraction(0)
        precision = Fraction(overlap, len(p))
        recall = Fraction(overlap, len(t))
        return 2 * precision * recall / (precision + recall)

    rng = random.Random(SEED + 2)
    vocab = [f"tok{i}" for i in range(40)]
    mismatches = 0
    for _ in range(1000):
        a = " ".join(rng.choices(vocab, k=rng.randint(0, 20)))
        b = " ".join(rng.choices(vocab, k=rng.randint(0, 20)))
        if abs(f1_score(a, b) - float(brute(a, b))) > 1e-12:
            mismatches += 1
    exact = (
        abs(f1_score("a b c", "a b d") - 2 / 3) < 1e-12
        and f1_score("same words here", "same words here") == 1.0
        and f1_score("", "x") == 0.0
        and f1_score("x", "") == 0.0
    )
    criterion(
        "A7",
        "token F1 equals brute-force multiset oracle (1000 cases)",
        mismatches == 0 and exact,
        f"mismatches={mismatches}, exact_cases={exact}",
    )


# -- A8 ------------------------------------------------------------------------

def test_a8_profiler_overhead_fraction(criterion, poisson_grid):
    reports, _ = poisson_grid
    stats = summarize(reports["adaptive"])
    ok = stats.profiler_fraction_mean <= 0.06 and stats.profiler_fraction_max <= 0.10
    criterion(
        "A8",
        "profiler delay fraction mean <= 0.06 and max <= 0.10",
        ok,
        f"mean={stats.profiler_fraction_mean:.4f}, max={stats.profiler_fraction_max:.4f}",
    )


# -- A9 ------------------------------------------------------------------------

def test_a9_determinism_byte_identical_reports(criterion, tmp_path):
    def write_all(report, tag):
        r = tmp_path / f"report-{tag}.jsonl"
        s = tmp_path / f"summary-{tag}.tsv"
        t = tmp_path / f"trace-{tag}.jsonl"
        write_report(report, r)
        write_summary([summarize(report)], s)
        write_trace(report.trace, t)
        return r.read_bytes(), s.read_bytes(), t.read_bytes()

    first = write_all(run_policy(ArrivalMode.POISSON), "one")
    second = write_all(run_policy(ArrivalMode.POISSON), "two")
    fixed_a = write_all(run_policy(ArrivalMode.POISSON, fixed=RagConfig(ST, 15)), "fa")
    fixed_b = write_all(run_policy(ArrivalMode.POISSON, fixed=RagConfig(ST, 15)), "fb")
    ok = first == second and fixed_a == fixed_b
    criterion("A9", "identical seeds give byte-identical report files", ok)


# -- A10 -----------------------------------------------------------------------

def test_a10_low_load_beats_best_fixed_config(criterion, sequential_grid):
    reports = sequential_grid
    stats = {name: summarize(r) for name, r in reports.items()}
    adaptive = stats.pop("adaptive")
    best_fixed = max(stats.values(), key=lambda s: s.mean_quality)
    ratio = adaptive.mean_delay / best_fixed.mean_delay

    # with zero noise and one query at a time, each non-fallback admission
    # must be the max-memory candidate of the query's pruned space
    wl = workload(ArrivalMode.SEQUENTIAL)
    truth_of = {q.id: q.hidden_truth for q in wl.queries}
    qlen_of = {q.id: q.query_token_len for q in wl.queries}
    adaptive_report = reports["adaptive"]
    max_memory_ok = True
    checked = 0
    for rec in adaptive_report.trace:
        if rec["event"] != "admission" or rec["fallback"]:
            continue
        qid = rec["query"]
        space = map_profile(profile_from_truth(truth_of[qid]))
        q = QueryRecord(id=qid, text="t", query_token_len=qlen_of[qid])
        best, best_key = None, None
        for i, cfg in enumerate(enumerate_candidates(space)):
            b = whole_bytes(q, cfg)
            if best_key is None or (b, i) > best_key:
                best, best_key = cfg, (b, i)
        if rec["config"] != best.describe():
            max_memory_ok = False
            break
        checked += 1
    ok = ratio <= 0.7 and max_memory_ok and checked == N_QUERIES
    criterion(
        "A10",
        "sequential-load delay <= 0.7x best fixed config; max-memory picks",
        ok,
        f"best_fixed={best_fixed.policy} ({best_fixed.mean_delay:.3f}s), "
        f"adaptive={adaptive.mean_delay:.3f}s, ratio={ratio:.3f}, "
        f"max_memory_ok={max_memory_ok}, checked={checked}",
    )
