# %% [markdown]
# # Training and relation-prediction metrics
#
# A synthetic graph with a held-out split. The default mode keeps each
# training triple in its own endpoints' contexts; `exclude_self` removes it
# for the batch that queries it, which shows how much the model relies on
# seeing the answer in the context.

# %%
from aggre import TrainConfig, build_context_index, evaluate_state, train
from aggre.evaluation import known_relations
from aggre.synthetic import random_graph

kg = random_graph(400, 120, 6, seed=1, valid=40, test=40)
ctx = build_context_index(kg)
known = known_relations(kg.triples)

# %%
for exclude_self in (False, True):
    cfg = TrainConfig(dim=32, num_layers=2, batch_size=64, max_epochs=30, seed=0,
                      exclude_self=exclude_self)
    result = train(kg, ctx, cfg)
    print(f"exclude_self={exclude_self}: best epoch {result.best_epoch}, "
          f"final loss {result.log[-1]['mean_loss']:.4f}")
    for split in ("train", "test"):
        for mode in ("raw", "filtered"):
            rep = evaluate_state(result.state, ctx, kg.split_triples(split), cfg.num_layers,
                                 mode=mode, known=known)
            print(f"  {split:5s} {mode:8s} MRR {rep.mrr:.3f}  MR {rep.mr:.3f}  Hit@3 {rep.hit3:.3f}")

# %% [markdown]
# With zero layers the model is plain DistMult.

# %%
cfg = TrainConfig(dim=32, num_layers=0, batch_size=64, max_epochs=30, seed=0)
result = train(kg, ctx, cfg)
rep = evaluate_state(result.state, ctx, kg.split_triples("test"), 0)
print(rep.table(name="DistMult", dataset="synthetic test"))
