# %% [markdown]
# # Entity and relation contexts
#
# Every triple (h, r, t) places (r, t) in the context of h, (r, h) in the
# context of t and (h, t) in the context of r. The index keeps these as
# CSR segments so aggregation can run as segment reductions.

# %%
from aggre.kg_store import KnowledgeGraph, build_context_index

kg = KnowledgeGraph.from_labeled(
    train=[("A", "r1", "B"), ("B", "r2", "C"), ("A", "r1", "C")],
    valid=[("X", "r2", "A")],
)
ctx = build_context_index(kg)  # train triples only
ent, rel = kg.entity_vocab, kg.relation_vocab

# %%
for i, name in enumerate(ent.labels):
    pairs = [(rel.label(r), ent.label(e)) for r, e, _ in ctx.entity_context(i)]
    print(f"C_{name} = {pairs}")
for j, name in enumerate(rel.labels):
    pairs = [(ent.label(h), ent.label(t)) for h, t, _ in ctx.relation_context(j)]
    print(f"C_{name} = {pairs}")

# %% [markdown]
# X only appears in the validation split, so its segment is empty. The raw
# CSR arrays:

# %%
print("entity offsets  ", ctx.entity_ctx_offsets)
print("entity pairs    ", ctx.entity_ctx_pairs.tolist())
print("source triples  ", ctx.entity_ctx_src.tolist())
print("relation offsets", ctx.relation_ctx_offsets)

# %% [markdown]
# With `directed=True` pairs reached through an incoming edge get their own
# relation slot (r + |R|), which doubles the relation table.

# %%
dctx = build_context_index(kg, directed=True)
print("relation slots:", dctx.num_relation_slots)
print("C_B directed:", dctx.entity_context(ent.id("B")))
