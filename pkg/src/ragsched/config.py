"""Run configuration: one human-editable JSON file per run, parsed
schema-strictly (unknown keys are rejected) so misconfigurations fail loudly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .mapping import EnumGranularity, PrunedConfigSpace
from .profiler import DEFAULT_FALLBACK_SPACE, GATE_THRESHOLD, NoiseParams
from .sim import CostModel, QualityModel
from .types import (
    DEFAULT_MAX_CHUNKS,
    DEFAULT_TEMPLATE_TOKENS,
    ConfigError,
    DatasetMeta,
    IntRange,
    ModelSpec,
    RagConfig,
    SynthesisMethod,
)
from .workload import (
    DATASET_PROFILES,
    ArrivalMode,
    ArrivalSpec,
    LengthProfile,
    TruthDistribution,
    Workload,
    WorkloadSpec,
    gen_workload,
    load_trace,
)

DEFAULT_MODEL = ModelSpec(
    num_layers=32,
    num_kv_heads=8,
    head_dim=128,
    bytes_per_element=2,
    max_context_tokens=131072,
)
DEFAULT_META = DatasetMeta(
    description="Reading-comprehension passages split into fixed-size chunks.",
    chunk_size=1000,
)
DEFAULT_CAPACITY_BYTES = 16 * 1024**3

DEFAULT_SWEEP_GRID: tuple[RagConfig, ...] = (
    RagConfig(SynthesisMethod.MAP_RERANK, 5),
    RagConfig(SynthesisMethod.MAP_RERANK, 15),
    RagConfig(SynthesisMethod.MAP_RERANK, 30),
    RagConfig(SynthesisMethod.STUFF, 5),
    RagConfig(SynthesisMethod.STUFF, 15),
    RagConfig(SynthesisMethod.STUFF, 30),
    RagConfig(SynthesisMethod.MAP_REDUCE, 5, 60),
    RagConfig(SynthesisMethod.MAP_REDUCE, 15, 100),
    RagConfig(SynthesisMethod.MAP_REDUCE, 30, 300),
)


@dataclass(frozen=True)
class ProfilerConfig:
    mode: str = "mock"  # "mock" or "remote"
    noise: NoiseParams = NoiseParams()
    seed: int | None = None
    threshold: float = GATE_THRESHOLD
    endpoint: str | None = None
    model_name: str = "profiler"
    timeout_secs: float = 30.0


@dataclass(frozen=True)
class SchedulerConfig:
    granularity: EnumGranularity = EnumGranularity()
    max_chunks: int = DEFAULT_MAX_CHUNKS
    template_tokens: int = DEFAULT_TEMPLATE_TOKENS
    out_budget: int | None = None  # defaults to the length profile's top output
    default_fallback_space: PrunedConfigSpace = DEFAULT_FALLBACK_SPACE


@dataclass(frozen=True)
class OutputConfig:
    report: str = "out/report.jsonl"
    summary: str = "out/summary.tsv"
    trace_log: str | None = None


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec = DEFAULT_MODEL
    meta: DatasetMeta = DEFAULT_META
    capacity_bytes: int = DEFAULT_CAPACITY_BYTES
    cost: CostModel = CostModel()
    quality: QualityModel = QualityModel()
    profiler: ProfilerConfig = ProfilerConfig()
    scheduler: SchedulerConfig = SchedulerConfig()
    workload_spec: WorkloadSpec | None = None
    trace_path: str | None = None
    seed: int = 42
    output: OutputConfig = OutputConfig()
    sweep_grid: tuple[RagConfig, ...] = DEFAULT_SWEEP_GRID
    length_profile: LengthProfile = field(
        default_factory=lambda: DATASET_PROFILES["single_hop_qa"]
    )

    @property
    def out_budget(self) -> int:
        if self.scheduler.out_budget is not None:
            return self.scheduler.out_budget
        return self.length_profile.out_budget

    def build_workload(self) -> Workload:
        if self.trace_path is not None:
            return load_trace(self.trace_path)
        assert self.workload_spec is not None
        return gen_workload(self.workload_spec, self.seed)


def _section(raw: dict, key: str, allowed: set[str]) -> dict:
    sub = raw.get(key, {})
    if not isinstance(sub, dict):
        raise ConfigError(f"section {key!r} must be an object")
    unknown = set(sub) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {key!r}: {sorted(unknown)}")
    return sub


def _build(cls, raw: dict, context: str):
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {context}: {exc}") from exc


def parse_method(name: str) -> SynthesisMethod:
    try:
        return SynthesisMethod(name)
    except ValueError as exc:
        raise ConfigError(
            f"unknown synthesis method {name!r}; expected one of "
            f"{[m.value for m in SynthesisMethod]}"
        ) from exc


def parse_grid_entry(raw: dict) -> RagConfig:
    unknown = set(raw) - {"method", "num_chunks", "intermediate_length"}
    if unknown:
        raise ConfigError(f"unknown keys in grid entry: {sorted(unknown)}")
    try:
        method = parse_method(raw["method"])
        return RagConfig(method, int(raw["num_chunks"]), raw.get("intermediate_length"))
    except KeyError as exc:
        raise ConfigError(f"grid entry missing {exc}") from exc


def _parse_space(raw: dict) -> PrunedConfigSpace:
    unknown = set(raw) - {"methods", "num_chunks", "intermediate_length"}
    if unknown:
        raise ConfigError(f"unknown keys in space: {sorted(unknown)}")
    try:
        methods = frozenset(parse_method(m) for m in raw["methods"])
        chunks = IntRange(*raw["num_chunks"])
        interlen = raw.get("intermediate_length")
        return PrunedConfigSpace(
            methods, chunks, IntRange(*interlen) if interlen else None
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad fallback space: {exc}") from exc


_TOP_KEYS = {
    "model",
    "dataset",
    "capacity_bytes",
    "cost",
    "quality",
    "profiler",
    "scheduler",
    "workload",
    "seed",
    "output",
    "sweep_grid",
}


def load_run_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Load and validate a run configuration file.

    overrides (from CLI flags) replace top-level scalar values after the
    file is read and before validation.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"run config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    model = _build(
        ModelSpec,
        _section(
            raw,
            "model",
            {"num_layers", "num_kv_heads", "head_dim", "bytes_per_element", "max_context_tokens"},
        )
        or {
            "num_layers": DEFAULT_MODEL.num_layers,
            "num_kv_heads": DEFAULT_MODEL.num_kv_heads,
            "head_dim": DEFAULT_MODEL.head_dim,
            "bytes_per_element": DEFAULT_MODEL.bytes_per_element,
            "max_context_tokens": DEFAULT_MODEL.max_context_tokens,
        },
        "model spec",
    )
    meta_raw = _section(raw, "dataset", {"description", "chunk_size"})
    meta = _build(DatasetMeta, meta_raw, "dataset meta") if meta_raw else DEFAULT_META
    cost = _build(
        CostModel,
        _section(
            raw,
            "cost",
            {
                "prefill_secs_per_token",
                "decode_secs_per_token_base",
                "batch_slowdown_per_seq",
                "profiler_latency_secs",
            },
        ),
        "cost model",
    )
    quality = _build(
        QualityModel,
        _section(
            raw, "quality", {"base", "w_joint", "w_under", "w_over", "w_len", "noise_sigma"}
        ),
        "quality model",
    )

    prof_raw = dict(
        _section(
            raw,
            "profiler",
            {"mode", "noise", "seed", "threshold", "endpoint", "model_name", "timeout_secs"},
        )
    )
    if "noise" in prof_raw:
        noise_raw = prof_raw.pop("noise")
        unknown = set(noise_raw) - {
            "flip_joint",
            "flip_complexity",
            "shift_pieces",
            "jitter_summary",
        }
        if unknown:
            raise ConfigError(f"unknown keys in profiler.noise: {sorted(unknown)}")
        prof_raw["noise"] = _build(NoiseParams, noise_raw, "profiler noise")
    profiler = _build(ProfilerConfig, prof_raw, "profiler config")
    if profiler.mode not in ("mock", "remote"):
        raise ConfigError(f"profiler.mode must be 'mock' or 'remote', got {profiler.mode!r}")
    if profiler.mode == "remote" and not profiler.endpoint:
        raise ConfigError("profiler.mode 'remote' requires profiler.endpoint")

    sched_raw = dict(
        _section(
            raw,
            "scheduler",
            {
                "chunk_step",
                "interlen_step",
                "max_chunks",
                "template_tokens",
                "out_budget",
                "default_fallback_space",
            },
        )
    )
    gran = EnumGranularity(
        chunk_step=sched_raw.pop("chunk_step", 1),
        interlen_step=sched_raw.pop("interlen_step", 10),
    )
    if "default_fallback_space" in sched_raw:
        sched_raw["default_fallback_space"] = _parse_space(
            sched_raw.pop("default_fallback_space")
        )
    scheduler = _build(SchedulerConfig, {"granularity": gran, **sched_raw}, "scheduler config")

    wl_raw = dict(
        _section(
            raw,
            "workload",
            {"mode", "rate_per_sec", "num_queries", "length_profile", "truth", "path"},
        )
    )
    overrides = overrides or {}
    if "num_queries" in overrides and overrides["num_queries"] is not None:
        wl_raw["num_queries"] = overrides["num_queries"]

    trace_path: str | None = None
    workload_spec: WorkloadSpec | None = None
    mode_name = wl_raw.get("mode", "poisson")
    length_profile = DATASET_PROFILES["single_hop_qa"]
    if "length_profile" in wl_raw:
        lp = wl_raw["length_profile"]
        if isinstance(lp, str):
            if lp not in DATASET_PROFILES:
                raise ConfigError(
                    f"unknown length profile {lp!r}; expected one of "
                    f"{sorted(DATASET_PROFILES)}"
                )
            length_profile = DATASET_PROFILES[lp]
        else:
            unknown = set(lp) - {"input_range", "output_range"}
            if unknown:
                raise ConfigError(f"unknown keys in length_profile: {sorted(unknown)}")
            length_profile = _build(
                LengthProfile,
                {
                    "input_range": tuple(lp["input_range"]),
                    "output_range": tuple(lp["output_range"]),
                },
                "length profile",
            )
    if mode_name == "trace":
        if "path" not in wl_raw:
            raise ConfigError("workload.mode 'trace' requires workload.path")
        trace_path = wl_raw["path"]
        if not Path(trace_path).exists():
            raise ConfigError(f"trace file not found: {trace_path}")
    else:
        try:
            mode = ArrivalMode(mode_name)
        except ValueError as exc:
            raise ConfigError(f"unknown workload mode {mode_name!r}") from exc
        truth_raw = wl_raw.get("truth", {})
        unknown = set(truth_raw) - {
            "p_joint",
            "p_complex_given_joint",
            "p_complex_given_simple",
            "pieces_range_joint",
            "pieces_range_simple",
            "summary_range",
        }
        if unknown:
            raise ConfigError(f"unknown keys in workload.truth: {sorted(unknown)}")
        for key in ("pieces_range_joint", "pieces_range_simple", "summary_range"):
            if key in truth_raw:
                truth_raw[key] = tuple(truth_raw[key])
        truth = _build(TruthDistribution, truth_raw, "truth distribution")
        workload_spec = _build(
            WorkloadSpec,
            {
                "num_queries": wl_raw.get("num_queries", 200),
                "arrival": ArrivalSpec(mode, wl_raw.get("rate_per_sec", 2.0)),
                "length_profile": length_profile,
                "truth_distribution": truth,
            },
            "workload spec",
        )

    out_raw = _section(raw, "output", {"report", "summary", "trace_log"})
    output = _build(OutputConfig, out_raw, "output paths")

    grid = DEFAULT_SWEEP_GRID
    if "sweep_grid" in raw:
        if not isinstance(raw["sweep_grid"], list):
            raise ConfigError("sweep_grid must be a list of config objects")
        grid = tuple(parse_grid_entry(e) for e in raw["sweep_grid"])

    cfg = RunConfig(
        model=model,
        meta=meta,
        capacity_bytes=int(overrides.get("capacity_bytes") or raw.get("capacity_bytes", DEFAULT_CAPACITY_BYTES)),
        cost=cost,
        quality=quality,
        profiler=profiler,
        scheduler=scheduler,
        workload_spec=workload_spec,
        trace_path=trace_path,
        seed=int(overrides.get("seed") if overrides.get("seed") is not None else raw.get("seed", 42)),
        output=output,
        sweep_grid=grid,
        length_profile=length_profile,
    )
    if cfg.capacity_bytes <= 0:
        raise ConfigError("capacity_bytes must be positive")
    return cfg
