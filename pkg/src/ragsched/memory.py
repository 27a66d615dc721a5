"""KV-cache memory model: per-call token counts and byte requirements.

Every call reserves KV space for its full prompt plus its output budget,
padded by a 2% safety buffer. Buffer arithmetic is integer-exact:
ceil(1.02 * x) is computed as (102 * x + 99) // 100.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .types import (
    DEFAULT_MAX_CHUNKS,
    DEFAULT_TEMPLATE_TOKENS,
    ContextOverflow,
    DatasetMeta,
    InvalidChunkCount,
    ModelSpec,
    QueryRecord,
    RagConfig,
    SynthesisMethod,
)

BUFFER_NUMERATOR = 102
BUFFER_DENOMINATOR = 100


class CallKind(str, Enum):
    SINGLE = "single"
    MAPPER = "mapper"
    REDUCER = "reducer"
    RERANK = "rerank"


class AdmissionMode(str, Enum):
    """How a plan's memory need is measured for admission."""

    WHOLE = "whole"
    PER_CALL = "per_call"


@dataclass(frozen=True)
class LlmCall:
    """One LLM invocation within a plan.

    kv_bytes covers prompt plus output budget with the 2% buffer applied.
    Only a reducer carries dependencies (on all of its mappers).
    """

    kind: CallKind
    prompt_tokens: int
    max_output_tokens: int
    kv_bytes: int
    index: int = 0
    depends_on: frozenset[int] = field(default_factory=frozenset)


@dataclass(frozen=True)
class CallPlan:
    """Ordered calls realizing one config for one query."""

    calls: tuple[LlmCall, ...]
    total_bytes: int

    def independent_calls(self) -> list[int]:
        return [i for i, c in enumerate(self.calls) if not c.depends_on]


def bytes_per_kv_token(model: ModelSpec) -> int:
    """KV bytes stored per token: key and value planes across all layers."""
    raw = 2 * model.num_layers * model.num_kv_heads * model.head_dim * model.bytes_per_element
    return int(raw)


def buffered_bytes(tokens: int, per_token_bytes: int) -> int:
    """Apply the 2% overcommit buffer to a call's KV footprint, rounding up."""
    return (BUFFER_NUMERATOR * tokens * per_token_bytes + BUFFER_DENOMINATOR - 1) // BUFFER_DENOMINATOR


def _check_context(prompt: int, output: int, model: ModelSpec, label: str) -> None:
    if prompt + output > model.max_context_tokens:
        raise ContextOverflow(
            f"{label} needs {prompt + output} tokens, context window is "
            f"{model.max_context_tokens}"
        )


def plan_calls(
    q: QueryRecord,
    cfg: RagConfig,
    meta: DatasetMeta,
    model: ModelSpec,
    out_budget: int,
    *,
    template_tokens: int = DEFAULT_TEMPLATE_TOKENS,
    max_chunks: int = DEFAULT_MAX_CHUNKS,
) -> CallPlan:
    """Expand a config into its list of LLM calls with KV requirements.

    stuff: one call over the concatenated chunks.
    map_rerank: one independent call per chunk.
    map_reduce: one mapper per chunk producing intermediate_length tokens,
    then one reducer over the query plus all summaries.

    Raises ContextOverflow if any single call exceeds the context window.
    """
    if not 1 <= cfg.num_chunks <= max_chunks:
        raise InvalidChunkCount(f"num_chunks {cfg.num_chunks} outside [1, {max_chunks}]")
    if out_budget <= 0:
        raise ValueError("out_budget must be positive")
    per_tok = bytes_per_kv_token(model)
    qlen = q.query_token_len
    n = cfg.num_chunks
    calls: list[LlmCall] = []

    if cfg.synthesis_method is SynthesisMethod.STUFF:
        prompt = qlen + n * meta.chunk_size + template_tokens
        _check_context(prompt, out_budget, model, "stuff call")
        calls.append(
            LlmCall(CallKind.SINGLE, prompt, out_budget, buffered_bytes(prompt + out_budget, per_tok))
        )
    elif cfg.synthesis_method is SynthesisMethod.MAP_RERANK:
        prompt = qlen + meta.chunk_size + template_tokens
        _check_context(prompt, out_budget, model, "rerank call")
        kv = buffered_bytes(prompt + out_budget, per_tok)
        for i in range(n):
            calls.append(LlmCall(CallKind.RERANK, prompt, out_budget, kv, index=i))
    else:
        interlen = cfg.intermediate_length
        if interlen is None or interlen <= 0:
            raise ValueError("map_reduce config requires a positive intermediate_length")
        mapper_prompt = qlen + meta.chunk_size + template_tokens
        _check_context(mapper_prompt, interlen, model, "mapper call")
        mapper_kv = buffered_bytes(mapper_prompt + interlen, per_tok)
        for i in range(n):
            calls.append(LlmCall(CallKind.MAPPER, mapper_prompt, interlen, mapper_kv, index=i))
        reducer_prompt = qlen + n * interlen + template_tokens
        _check_context(reducer_prompt, out_budget, model, "reducer call")
        calls.append(
            LlmCall(
                CallKind.REDUCER,
                reducer_prompt,
                out_budget,
                buffered_bytes(reducer_prompt + out_budget, per_tok),
                depends_on=frozenset(range(n)),
            )
        )

    return CallPlan(calls=tuple(calls), total_bytes=sum(c.kv_bytes for c in calls))


def memory_requirement(plan: CallPlan, admission: AdmissionMode = AdmissionMode.WHOLE) -> int:
    """Bytes the scheduler must find free to admit this plan.

    WHOLE is the sum over all calls; PER_CALL is the largest single call,
    the unit admissible incrementally for rerank and mapper calls.
    """
    if admission is AdmissionMode.WHOLE:
        return plan.total_bytes
    return max(c.kv_bytes for c in plan.calls)


def plan_bytes(
    query_token_len: int,
    cfg: RagConfig,
    chunk_size: int,
    per_token_bytes: int,
    out_budget: int,
    template_tokens: int = DEFAULT_TEMPLATE_TOKENS,
) -> int:
    """Whole-admission bytes of a plan from closed-form token arithmetic.

    Fast path for best-fit scans over many candidates; must agree with
    memory_requirement(plan_calls(...), WHOLE) exactly.
    """
    n = cfg.num_chunks
    if cfg.synthesis_method is SynthesisMethod.STUFF:
        return buffered_bytes(
            query_token_len + n * chunk_size + template_tokens + out_budget, per_token_bytes
        )
    if cfg.synthesis_method is SynthesisMethod.MAP_RERANK:
        return n * buffered_bytes(
            query_token_len + chunk_size + template_tokens + out_budget, per_token_bytes
        )
    interlen = cfg.intermediate_length
    if interlen is None or interlen <= 0:
        raise ValueError("map_reduce config requires a positive intermediate_length")
    mapper = buffered_bytes(
        query_token_len + chunk_size + template_tokens + interlen, per_token_bytes
    )
    reducer = buffered_bytes(
        query_token_len + n * interlen + template_tokens + out_budget, per_token_bytes
    )
    return n * mapper + reducer
