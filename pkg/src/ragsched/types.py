"""Core value types shared by every other module: the RAG configuration
knobs, query records, and model/serving parameters.

All types here are immutable and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

DEFAULT_MAX_CHUNKS = 35
DEFAULT_TEMPLATE_TOKENS = 64

PIECES_DOMAIN = (1, 10)
SUMMARY_LEN_DOMAIN = (30, 200)


class SynthesisMethod(str, Enum):
    """How retrieved chunks are combined into LLM calls."""

    MAP_RERANK = "map_rerank"
    STUFF = "stuff"
    MAP_REDUCE = "map_reduce"


class InvalidChunkCount(ValueError):
    """num_chunks is outside [1, max_chunks]."""


class ContextOverflow(ValueError):
    """A prompt would not fit the model's context window."""


class ConfigError(ValueError):
    """A run configuration or workload is inconsistent or unusable."""


@dataclass(frozen=True, order=True)
class IntRange:
    """Inclusive integer interval [low, high]."""

    low: int
    high: int

    def __post_init__(self) -> None:
        if self.low > self.high:
            raise ValueError(f"empty range [{self.low}, {self.high}]")

    def __contains__(self, value: object) -> bool:
        return isinstance(value, int) and self.low <= value <= self.high

    def clamp_to(self, low: int, high: int) -> "IntRange":
        return IntRange(min(max(self.low, low), high), min(max(self.high, low), high))

    def hull(self, other: "IntRange") -> "IntRange":
        return IntRange(min(self.low, other.low), max(self.high, other.high))

    def values(self, step: int = 1) -> list[int]:
        return list(range(self.low, self.high + 1, step))

    def count(self, step: int = 1) -> int:
        return (self.high - self.low) // step + 1


@dataclass(frozen=True)
class RagConfig:
    """One concrete knob assignment.

    intermediate_length is only meaningful for MAP_REDUCE and is ignored by
    all consumers otherwise.
    """

    synthesis_method: SynthesisMethod
    num_chunks: int
    intermediate_length: int | None = None

    def describe(self) -> str:
        if self.synthesis_method is SynthesisMethod.MAP_REDUCE:
            return f"{self.synthesis_method.value}/{self.num_chunks}/{self.intermediate_length}"
        return f"{self.synthesis_method.value}/{self.num_chunks}"


@dataclass(frozen=True)
class TrueProfile:
    """Hidden ground-truth profile attached to simulated queries."""

    needs_joint_reasoning: bool
    complexity_high: bool
    pieces_required: int
    required_summary_len: int

    def __post_init__(self) -> None:
        if not PIECES_DOMAIN[0] <= self.pieces_required <= PIECES_DOMAIN[1]:
            raise ValueError(f"pieces_required {self.pieces_required} outside {PIECES_DOMAIN}")
        lo, hi = SUMMARY_LEN_DOMAIN
        if not lo <= self.required_summary_len <= hi:
            raise ValueError(
                f"required_summary_len {self.required_summary_len} outside {SUMMARY_LEN_DOMAIN}"
            )


@dataclass(frozen=True)
class QueryRecord:
    """A single query, either with a golden answer (live mode) or a hidden
    true profile (simulation mode)."""

    id: str
    text: str
    query_token_len: int
    ground_truth: str | None = None
    hidden_truth: TrueProfile | None = None

    def __post_init__(self) -> None:
        if self.query_token_len <= 0:
            raise ValueError("query_token_len must be positive")


@dataclass(frozen=True)
class ModelSpec:
    """Serving-model parameters that determine KV-cache cost."""

    num_layers: int
    num_kv_heads: int
    head_dim: int
    bytes_per_element: float
    max_context_tokens: int

    _ALLOWED_WIDTHS = (0.5, 1, 2, 4)

    def __post_init__(self) -> None:
        for name in ("num_layers", "num_kv_heads", "head_dim", "max_context_tokens"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.bytes_per_element not in self._ALLOWED_WIDTHS:
            raise ValueError(
                f"bytes_per_element must be one of {self._ALLOWED_WIDTHS} "
                f"(packed 4-bit through fp32), got {self.bytes_per_element}"
            )


@dataclass(frozen=True)
class DatasetMeta:
    """One-line database description plus the fixed chunk size in tokens."""

    description: str
    chunk_size: int

    def __post_init__(self) -> None:
        if not self.description:
            raise ValueError("description must be non-empty")
        if self.chunk_size <= 0:
            raise ValueError("chunk_size must be positive")


def stuff_prompt_tokens(
    num_chunks: int,
    chunk_size: int,
    query_token_len: int,
    template_tokens: int = DEFAULT_TEMPLATE_TOKENS,
) -> int:
    """Token count of a single prompt concatenating num_chunks chunks."""
    return query_token_len + num_chunks * chunk_size + template_tokens


def validate_config(
    cfg: RagConfig,
    model: ModelSpec,
    meta: DatasetMeta,
    *,
    query_token_len: int = 0,
    max_chunks: int = DEFAULT_MAX_CHUNKS,
    template_tokens: int = DEFAULT_TEMPLATE_TOKENS,
) -> None:
    """Check a config against its invariants and the model context window.

    The context check uses the single concatenated prompt for num_chunks
    chunks, the largest prompt any synthesis method produces for the same
    chunk count in the common case of summaries shorter than a chunk.

    Raises:
        InvalidChunkCount: num_chunks outside [1, max_chunks].
        ContextOverflow: the concatenated prompt exceeds the context window.
        ValueError: a MAP_REDUCE config without a positive intermediate_length.
    """
    if not 1 <= cfg.num_chunks <= max_chunks:
        raise InvalidChunkCount(
            f"num_chunks {cfg.num_chunks} outside [1, {max_chunks}]"
        )
    if cfg.synthesis_method is SynthesisMethod.MAP_REDUCE:
        if cfg.intermediate_length is None or cfg.intermediate_length <= 0:
            raise ValueError("map_reduce config requires a positive intermediate_length")
    prompt = stuff_prompt_tokens(
        cfg.num_chunks, meta.chunk_size, query_token_len, template_tokens
    )
    if prompt > model.max_context_tokens:
        raise ContextOverflow(
            f"prompt of {prompt} tokens exceeds context window "
            f"of {model.max_context_tokens}"
        )
