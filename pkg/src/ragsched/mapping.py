"""Rule-based mapping from a query profile to a pruned configuration space,
plus enumeration of concrete candidate configs for the scheduler."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .types import (
    DEFAULT_MAX_CHUNKS,
    PIECES_DOMAIN,
    SUMMARY_LEN_DOMAIN,
    IntRange,
    RagConfig,
    SynthesisMethod,
)

# Multiplier on pieces_required for the top of the chunk range: leaves room
# for imperfect retrieval and gives the scheduler candidates to trade off.
CHUNK_RANGE_FACTOR = 3

# Canonical enumeration order; candidate lists and serialized method sets
# follow it so identical inputs always produce identical outputs.
METHOD_ORDER = (SynthesisMethod.MAP_RERANK, SynthesisMethod.STUFF, SynthesisMethod.MAP_REDUCE)


class EmptyPrunedSpace(ValueError):
    """A pruned space enumerated to zero candidates."""


@dataclass(frozen=True)
class QueryProfile:
    """Estimated per-query profile: the four dimensions plus a confidence."""

    complexity_high: bool
    needs_joint_reasoning: bool
    pieces_required: int
    summary_len_range: IntRange
    confidence: float

    def __post_init__(self) -> None:
        if not PIECES_DOMAIN[0] <= self.pieces_required <= PIECES_DOMAIN[1]:
            raise ValueError(f"pieces_required {self.pieces_required} outside {PIECES_DOMAIN}")
        lo, hi = SUMMARY_LEN_DOMAIN
        if not (lo <= self.summary_len_range.low and self.summary_len_range.high <= hi):
            raise ValueError(f"summary_len_range {self.summary_len_range} outside {SUMMARY_LEN_DOMAIN}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class PrunedConfigSpace:
    """Per-query narrowed knob ranges.

    intermediate_length_range is present exactly when MAP_REDUCE is in the
    method set.
    """

    synthesis_methods: frozenset[SynthesisMethod]
    num_chunks_range: IntRange
    intermediate_length_range: IntRange | None = None

    def __post_init__(self) -> None:
        if not self.synthesis_methods:
            raise ValueError("synthesis_methods must be non-empty")
        has_mr = SynthesisMethod.MAP_REDUCE in self.synthesis_methods
        if has_mr and self.intermediate_length_range is None:
            raise ValueError("map_reduce in space requires intermediate_length_range")
        if not has_mr and self.intermediate_length_range is not None:
            raise ValueError("intermediate_length_range only applies with map_reduce")

    def methods_ordered(self) -> list[SynthesisMethod]:
        return [m for m in METHOD_ORDER if m in self.synthesis_methods]

    def contains(self, cfg: RagConfig) -> bool:
        if cfg.synthesis_method not in self.synthesis_methods:
            return False
        if cfg.num_chunks not in self.num_chunks_range:
            return False
        if cfg.synthesis_method is SynthesisMethod.MAP_REDUCE:
            assert self.intermediate_length_range is not None
            return cfg.intermediate_length in self.intermediate_length_range
        return True


@dataclass(frozen=True)
class EnumGranularity:
    """Step sizes used when discretizing a pruned space into candidates."""

    chunk_step: int = 1
    interlen_step: int = 10

    def __post_init__(self) -> None:
        if self.chunk_step < 1 or self.interlen_step < 1:
            raise ValueError("granularity steps must be at least 1")


@dataclass(frozen=True)
class FullSpaceBounds:
    """Extent of the unpruned grid: all methods crossed with both ranges."""

    num_chunks_range: IntRange = IntRange(1, DEFAULT_MAX_CHUNKS)
    intermediate_length_range: IntRange = IntRange(*SUMMARY_LEN_DOMAIN)


def map_profile(profile: QueryProfile, max_chunks: int = DEFAULT_MAX_CHUNKS) -> PrunedConfigSpace:
    """Prune the configuration space for one profile.

    No joint reasoning -> map_rerank only. Joint reasoning at low
    complexity -> stuff. Joint reasoning at high complexity -> stuff or
    map_reduce. The chunk range spans pieces_required to three times that,
    clamped to [1, max_chunks]; the summary range passes through as the
    intermediate length range whenever map_reduce is included.
    """
    if not profile.needs_joint_reasoning:
        methods = frozenset({SynthesisMethod.MAP_RERANK})
    elif not profile.complexity_high:
        methods = frozenset({SynthesisMethod.STUFF})
    else:
        methods = frozenset({SynthesisMethod.STUFF, SynthesisMethod.MAP_REDUCE})

    n = profile.pieces_required
    chunks = IntRange(n, CHUNK_RANGE_FACTOR * n).clamp_to(1, max_chunks)

    interlen = profile.summary_len_range if SynthesisMethod.MAP_REDUCE in methods else None
    return PrunedConfigSpace(methods, chunks, interlen)


def enumerate_candidates(
    space: PrunedConfigSpace,
    granularity: EnumGranularity = EnumGranularity(),
    sort_key: Callable[[RagConfig], int] | None = None,
) -> list[RagConfig]:
    """List every concrete config in the space at the given granularity.

    The grid order is method-major (map_rerank, stuff, map_reduce), then
    chunk count ascending, then intermediate length ascending. When
    sort_key is given (the scheduler passes the per-query memory
    requirement) the list is stably re-sorted ascending by it, so a
    reverse scan yields best-fit.
    """
    candidates: list[RagConfig] = []
    chunk_values = space.num_chunks_range.values(granularity.chunk_step)
    for method in space.methods_ordered():
        if method is SynthesisMethod.MAP_REDUCE:
            assert space.intermediate_length_range is not None
            interlens = space.intermediate_length_range.values(granularity.interlen_step)
            for n in chunk_values:
                for il in interlens:
                    candidates.append(RagConfig(method, n, il))
        else:
            for n in chunk_values:
                candidates.append(RagConfig(method, n))
    if sort_key is not None:
        candidates.sort(key=sort_key)
    return candidates


def space_reduction_factor(
    space: PrunedConfigSpace,
    bounds: FullSpaceBounds = FullSpaceBounds(),
    granularity: EnumGranularity = EnumGranularity(),
) -> float:
    """How many times smaller the pruned space is than the unpruned grid.

    The unpruned grid is counted naively as methods x chunk values x
    intermediate-length values under the same granularity.
    """
    full = (
        len(METHOD_ORDER)
        * bounds.num_chunks_range.count(granularity.chunk_step)
        * bounds.intermediate_length_range.count(granularity.interlen_step)
    )
    pruned = len(enumerate_candidates(space, granularity))
    if pruned == 0:
        raise EmptyPrunedSpace(f"no candidates in {space} at {granularity}")
    return full / pruned


def hull_of_spaces(spaces: list[PrunedConfigSpace]) -> PrunedConfigSpace:
    """Union hull: union of method sets, interval hull of both ranges."""
    if not spaces:
        raise ValueError("hull of zero spaces")
    methods = frozenset().union(*(s.synthesis_methods for s in spaces))
    chunks = spaces[0].num_chunks_range
    for s in spaces[1:]:
        chunks = chunks.hull(s.num_chunks_range)
    interlen: IntRange | None = None
    for s in spaces:
        if s.intermediate_length_range is not None:
            interlen = (
                s.intermediate_length_range
                if interlen is None
                else interlen.hull(s.intermediate_length_range)
            )
    if SynthesisMethod.MAP_REDUCE in methods and interlen is None:
        interlen = IntRange(*SUMMARY_LEN_DOMAIN)
    if SynthesisMethod.MAP_REDUCE not in methods:
        interlen = None
    return PrunedConfigSpace(methods, chunks, interlen)
