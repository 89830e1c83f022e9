#!/usr/bin/env python3
"""Regenerate the bundled toy dataset under data/toy/.

The toy data is small enough that the full CLI pipeline (fit-partitions,
train, evaluate, density-sweep, ablate) runs offline in seconds.
"""

from pathlib import Path

from densketch.embeddings import save_embeddings
from densketch.synthetic import (make_clustered_embeddings, make_session_log,
                                 split_sessions)

OUT = Path(__file__).resolve().parent.parent / "data" / "toy"

SESSION_CFG = """\
[experiment]
task = session
output_dir = ../../runs/toy-session
seed = 7

[data]
train_interactions = train.csv
test_interactions = test.csv

[modality:interactions]
embeddings = embeddings.txt
depth = 8
bits = 4

[modality:random]
random_codes = true
depth = 4
width = 16

[decay]
alpha = 0.95
w = 0.01

[model]
hidden_width = 64
hidden_layers = 2
output_modality = interactions

[train]
epochs = 3
batch_size = 64
learning_rate = 0.01
gamma = 0.5

[evaluate]
k = 20
cutoffs = 1,5,10,20
aggregator = gmean

[density]
n_points = 1500
n_components = 5
dim = 8
spread = 2.0
n_queries = 120
depth_values = 5 10
bits_values = 4 7
sweep_seeds = 0 1
"""

TOPK_CFG = """\
[experiment]
task = topk
output_dir = ../../runs/toy-topk
seed = 7

[data]
train_interactions = train.csv
test_interactions = test.csv

[modality:interactions]
embeddings = embeddings.txt
depth = 8
bits = 4

[model]
hidden_width = 64
hidden_layers = 2
output_modality = interactions

[train]
epochs = 3
batch_size = 64
learning_rate = 0.01
gamma = 0.5

[evaluate]
cutoffs = 1,5,10,20
aggregator = gmean
split_ratio = 0.8
"""


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    table, cluster_of = make_clustered_embeddings(
        n_items=60, n_clusters=6, dim=8, seed=13, spread=0.25)
    save_embeddings(table, OUT / "embeddings.txt")
    log = make_session_log(cluster_of, n_sessions=120, seed=29,
                           min_len=3, max_len=7, noise=0.1)
    train, test = split_sessions(log, 0.8)
    train.save(OUT / "train.csv")
    test.save(OUT / "test.csv")
    (OUT / "session.cfg").write_text(SESSION_CFG, encoding="utf-8")
    (OUT / "topk.cfg").write_text(TOPK_CFG, encoding="utf-8")
    print(f"wrote toy dataset to {OUT}")


if __name__ == "__main__":
    main()
