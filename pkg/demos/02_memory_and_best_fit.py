"""KV-cache sizing and memory-aware configuration selection.

Shrinking free GPU memory walks the best-fit choice down the pruned space;
when nothing fits, the fallback path picks a cheap out-of-space config
sized to whatever memory is left.
"""

from ragsched import (
    DatasetMeta,
    IntRange,
    ModelSpec,
    PrunedConfigSpace,
    QueryProfile,
    QueryRecord,
    RagConfig,
    SynthesisMethod,
    best_fit_select,
    bytes_per_kv_token,
    fallback_config,
    plan_calls,
)

model = ModelSpec(num_layers=32, num_kv_heads=8, head_dim=128,
                  bytes_per_element=2, max_context_tokens=131072)
meta = DatasetMeta(description="demo corpus", chunk_size=1000)
query = QueryRecord(id="demo", text="demo question", query_token_len=500)
OUT_BUDGET = 20

per_tok = bytes_per_kv_token(model)
print(f"KV bytes per token: {per_tok} "
      f"(2 planes x {model.num_layers} layers x {model.num_kv_heads} heads "
      f"x {model.head_dim} dims x {model.bytes_per_element} B)")

plan = plan_calls(query, RagConfig(SynthesisMethod.MAP_REDUCE, 4, 100), meta, model, OUT_BUDGET)
print(f"\nmap_reduce/4/100 expands into {len(plan.calls)} calls, "
      f"{plan.total_bytes / 2**30:.2f} GiB total (2% buffer included):")
for i, call in enumerate(plan.calls):
    deps = f" after {sorted(call.depends_on)}" if call.depends_on else ""
    print(f"  call {i}: {call.kind.value:<8} prompt {call.prompt_tokens:>5} tok, "
          f"output {call.max_output_tokens:>4} tok, {call.kv_bytes / 2**30:.3f} GiB{deps}")

space = PrunedConfigSpace(
    frozenset({SynthesisMethod.STUFF, SynthesisMethod.MAP_REDUCE}),
    IntRange(4, 12),
    IntRange(50, 120),
)
print("\nbest-fit over the pruned space as free memory shrinks:")
for free_gib in (16, 4, 2, 1, 0.5):
    free = int(free_gib * 2**30)
    cfg = best_fit_select(space, query, free, model=model, meta=meta, out_budget=OUT_BUDGET)
    label = cfg.describe() if cfg else "nothing fits"
    print(f"  {free_gib:>5} GiB free -> {label}")

profile = QueryProfile(
    complexity_high=True,
    needs_joint_reasoning=True,
    pieces_required=8,
    summary_len_range=IntRange(50, 120),
    confidence=0.95,
)
tight = int(0.5 * 2**30)
fb = fallback_config(profile, query, tight, model=model, meta=meta, out_budget=OUT_BUDGET)
print(f"\nwith 0.5 GiB free the fallback picks {fb.describe()}: "
      "as many chunks as still fit, never map_reduce")
