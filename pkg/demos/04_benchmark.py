# %% [markdown]
# # Full benchmark run
#
# Usage: `python demos/04_benchmark.py /path/to/WN18RR [layers]`
#
# The directory must hold train.txt / valid.txt / test.txt (TAB separated).
# WN18RR uses two layers, FB15K-237 four. On one CPU core a WN18RR epoch takes
# roughly ten minutes.

# %%
import logging
import sys
from pathlib import Path

from aggre import TrainConfig, build_context_index, evaluate_state, train
from aggre.kg_store import load_directory

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
data_dir = Path(sys.argv[1])
layers = int(sys.argv[2]) if len(sys.argv) > 2 else 2

kg = load_directory(data_dir)
ctx = build_context_index(kg)
print(f"{kg.num_entities} entities, {kg.num_relations} relations, "
      f"{len(kg.split_ids('train'))} train triples")

# %%
cfg = TrainConfig(num_layers=layers, seed=0)
result = train(kg, ctx, cfg, out_dir=Path("runs") / data_dir.name)
report = evaluate_state(result.state, ctx, kg.split_triples("test"), layers)
print(report.table(dataset=data_dir.name))
