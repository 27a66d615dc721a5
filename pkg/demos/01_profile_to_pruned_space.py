"""From a query profile to a pruned configuration space.

Three queries of rising difficulty show how the four profile dimensions
steer the synthesis method, the chunk range, and the summary-length range,
and how much of the configuration grid the rules prune away.
"""

from ragsched import (
    IntRange,
    QueryProfile,
    enumerate_candidates,
    map_profile,
    space_reduction_factor,
)

EXAMPLES = [
    (
        "Single-fact lookup: one standalone piece of information, no joint reasoning.",
        QueryProfile(
            complexity_high=False,
            needs_joint_reasoning=False,
            pieces_required=1,
            summary_len_range=IntRange(30, 60),
            confidence=0.97,
        ),
    ),
    (
        "Comparison across six values: simple, but the model must read them together.",
        QueryProfile(
            complexity_high=False,
            needs_joint_reasoning=True,
            pieces_required=6,
            summary_len_range=IntRange(60, 120),
            confidence=0.94,
        ),
    ),
    (
        "Why-question over scattered evidence: joint reasoning at high complexity.",
        QueryProfile(
            complexity_high=True,
            needs_joint_reasoning=True,
            pieces_required=4,
            summary_len_range=IntRange(50, 120),
            confidence=0.92,
        ),
    ),
]

for blurb, profile in EXAMPLES:
    space = map_profile(profile)
    candidates = enumerate_candidates(space)
    methods = ", ".join(m.value for m in space.methods_ordered())
    print(blurb)
    print(f"  methods: {{{methods}}}")
    print(f"  chunks:  [{space.num_chunks_range.low}, {space.num_chunks_range.high}]")
    if space.intermediate_length_range:
        r = space.intermediate_length_range
        print(f"  summary: [{r.low}, {r.high}] tokens")
    print(f"  {len(candidates)} concrete candidates, "
          f"{space_reduction_factor(space):.0f}x smaller than the full grid")
    print()
