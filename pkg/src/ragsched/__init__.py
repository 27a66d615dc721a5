"""Per-query RAG configuration control: query profiling, rule-based space
pruning, memory-aware best-fit scheduling, and a discrete-event simulator."""

from .types import (
    ConfigError,
    ContextOverflow,
    DatasetMeta,
    IntRange,
    InvalidChunkCount,
    ModelSpec,
    QueryRecord,
    RagConfig,
    SynthesisMethod,
    TrueProfile,
    validate_config,
)
from .mapping import (
    EnumGranularity,
    FullSpaceBounds,
    PrunedConfigSpace,
    QueryProfile,
    enumerate_candidates,
    map_profile,
    space_reduction_factor,
)
from .memory import (
    AdmissionMode,
    CallKind,
    CallPlan,
    LlmCall,
    bytes_per_kv_token,
    memory_requirement,
    plan_calls,
)
from .profiler import (
    GOLDEN_CONFIG,
    EstimatorUnavailable,
    FeedbackLedger,
    GateDecision,
    MockEstimator,
    NoiseParams,
    ProfilerOutput,
    QueryProfiler,
    RecentSpaceWindow,
    RemoteEstimator,
    UnparseableAnswer,
    gate_profile,
    maybe_record_feedback,
    mock_estimate,
    profile_from_truth,
)
from .scheduler import (
    Admission,
    PendingQuery,
    Scheduler,
    SchedulerParams,
    best_fit_select,
    fallback_config,
)
from .sim import CostModel, PipelineParams, QualityModel, call_latency, quality_of, run
from .workload import (
    ArrivalMode,
    ArrivalSpec,
    DATASET_PROFILES,
    LengthProfile,
    TruthDistribution,
    Workload,
    WorkloadSpec,
    gen_workload,
    load_trace,
    save_trace,
)
from .metrics import (
    EmptyReport,
    QueryResult,
    SimReport,
    SummaryStats,
    f1_score,
    nearest_rank_percentile,
    summarize,
)

__version__ = "0.1.0"
