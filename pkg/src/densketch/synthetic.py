"""Synthetic clustered datasets for tests, benchmarks and the toy pipeline.

Everything here is seeded and deterministic. The generators produce the two
shapes of structure the estimators are sensitive to: embedding clusters
(metric prior for the partitioner) and cluster-conditioned targets
(learnable structure for the conditional model).
"""

from __future__ import annotations

import numpy as np

from .embeddings import EmbeddingTable
from .pipeline import Interaction, InteractionLog


def make_gaussian_mixture(n_points: int, n_components: int, dim: int, seed: int,
                          spread: float = 0.25, center_scale: float = 1.0):
    """Sample points from an isotropic Gaussian mixture.

    Returns ``(X, assignments, centers)``; components are assigned
    round-robin so they are equally populated.
    """
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_components, dim)) * center_scale
    assignments = np.arange(n_points) % n_components
    X = centers[assignments] + spread * rng.standard_normal((n_points, dim))
    return X, assignments, centers


def make_clustered_embeddings(n_items: int, n_clusters: int, dim: int, seed: int,
                              spread: float = 0.25,
                              modality: str = "interactions"):
    """Embedding table with well-separated clusters.

    Returns ``(table, cluster_of)`` where ``cluster_of`` maps item id to its
    cluster index. Item ids are zero-padded so lexicographic order equals
    generation order.
    """
    X, assignments, _ = make_gaussian_mixture(n_items, n_clusters, dim, seed, spread)
    pad = len(str(n_items - 1))
    ids = [f"item{idx:0{pad}d}" for idx in range(n_items)]
    table = EmbeddingTable(modality, ids, X)
    cluster_of = {item: int(c) for item, c in zip(ids, assignments)}
    return table, cluster_of


def _items_by_cluster(cluster_of: dict) -> list[list[str]]:
    n_clusters = max(cluster_of.values()) + 1
    pools: list[list[str]] = [[] for _ in range(n_clusters)]
    for item in sorted(cluster_of):
        pools[cluster_of[item]].append(item)
    return pools


def make_session_log(cluster_of: dict, n_sessions: int, seed: int,
                     min_len: int = 3, max_len: int = 8,
                     target_shift: int = 0, noise: float = 0.0) -> InteractionLog:
    """Sessions whose items come from a single cluster per session.

    With ``target_shift == 0`` the whole session stays in one cluster, so
    the next item is predictable from local density alone. A nonzero shift
    draws the final item from cluster ``(c + shift) mod n_clusters``,
    structure only a conditional mapping can capture. ``noise`` is the
    per-event probability of drawing from the whole catalog instead of the
    session's cluster.
    """
    pools = _items_by_cluster(cluster_of)
    all_items = sorted(cluster_of)
    rng = np.random.default_rng(seed)
    records = []
    pad = len(str(max(n_sessions - 1, 1)))
    for s in range(n_sessions):
        cluster = int(rng.integers(len(pools)))
        length = int(rng.integers(min_len, max_len + 1))
        items = []
        for _ in range(length):
            if noise and rng.random() < noise:
                items.append(all_items[int(rng.integers(len(all_items)))])
            else:
                items.append(pools[cluster][int(rng.integers(len(pools[cluster])))])
        if target_shift:
            shifted = (cluster + target_shift) % len(pools)
            items[-1] = pools[shifted][int(rng.integers(len(pools[shifted])))]
        sid = f"s{s:0{pad}d}"
        for t, item in enumerate(items):
            records.append(Interaction(sid, item, float(t)))
    return InteractionLog(records)


def make_conditional_pairs(cluster_of: dict, n_pairs: int, seed: int,
                           items_per_input: int = 4, items_per_target: int = 3,
                           target_shift: int = 1):
    """(input_items, target_items) pairs with cluster-conditioned targets.

    Inputs are drawn from a cluster ``c``; targets from ``(c + target_shift)
    mod n_clusters``. Clusters are visited round-robin so item popularity
    stays flat and a popularity baseline carries no signal.
    """
    pools = _items_by_cluster(cluster_of)
    rng = np.random.default_rng(seed)
    pairs = []
    for p in range(n_pairs):
        cluster = p % len(pools)
        shifted = (cluster + target_shift) % len(pools)
        inputs = [pools[cluster][int(i)]
                  for i in rng.integers(len(pools[cluster]), size=items_per_input)]
        targets = list({pools[shifted][int(i)]
                        for i in rng.integers(len(pools[shifted]), size=items_per_target)})
        pairs.append((inputs, sorted(targets)))
    return pairs


def split_sessions(log: InteractionLog, train_fraction: float = 0.8):
    """Deterministic train/test split by session order of appearance."""
    sessions = list(log.sessions().items())
    n_train = int(round(train_fraction * len(sessions)))
    train = [r for _, rows in sessions[:n_train] for r in rows]
    test = [r for _, rows in sessions[n_train:] for r in rows]
    return InteractionLog(train), InteractionLog(test)
