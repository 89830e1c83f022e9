"""Pure (non-conditional) density estimation and its brute-force oracle.

The sketch-based estimator is validated against an exact Laplacian-kernel
density oracle via Pearson correlation (estimates are unnormalized, so only
correlation is meaningful). :func:`nk_sweep` maps estimation quality across
the depth/bits grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .partition import DLSHPartitioner
from .sketch import Sketch, normalize, reduce_depthwise
from .validation import as_float_matrix


@dataclass(frozen=True)
class DensityEstimate:
    """Unnormalized density estimates at a set of query points."""

    queries: np.ndarray
    estimates: np.ndarray

    def __post_init__(self):
        if self.queries.shape[0] != self.estimates.shape[0]:
            raise ValueError("queries and estimates length mismatch")
        if self.estimates.size and not np.isfinite(self.estimates).all():
            raise ValueError("non-finite estimate")


def _data_matrix(data) -> np.ndarray:
    if hasattr(data, "vectors"):
        return data.vectors
    return as_float_matrix(data, "data")


def emde_density(partitioner: DLSHPartitioner, data, queries,
                 aggregator: str = "gmean") -> DensityEstimate:
    """Sketch-based density estimate at each query point.

    All data points are aggregated with unit weight into one sketch, which is
    L1-normalized along the width axis; each query is then hashed through the
    partitioner (the same code path items use) and its per-depth bucket
    values are reduced with ``aggregator``.
    """
    X = _data_matrix(data)
    Q = as_float_matrix(queries, "queries")
    depth, width = partitioner.depth, partitioner.effective_width

    codes = partitioner.transform(X)
    values = np.zeros(depth * width)
    flat = np.arange(depth) * width + codes
    np.add.at(values, flat.reshape(-1), 1.0)
    s = normalize(Sketch(depth, width, values), "l1")

    query_codes = partitioner.transform(Q)
    per_depth = s.values[np.arange(depth) * width + query_codes]
    return DensityEstimate(Q, reduce_depthwise(per_depth, aggregator))


def brute_force_kde(data, queries, kernel: str = "laplacian",
                    bandwidth: float = 1.0) -> DensityEstimate:
    """Exact kernel density sums; the O(n_data * n_queries) oracle.

    ``estimate_j = sum_i exp(-||q_j - x_i||_1 / bandwidth)``.
    """
    if kernel != "laplacian":
        raise ValueError(f"unsupported kernel {kernel!r}")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be > 0")
    X = _data_matrix(data)
    Q = as_float_matrix(queries, "queries")
    dists = cdist(Q, X, metric="cityblock")
    return DensityEstimate(Q, np.exp(-dists / bandwidth).sum(axis=1))


def median_l1_bandwidth(data, max_sample: int = 1000, seed: int = 0) -> float:
    """Median pairwise L1 distance over a seeded subsample of the data."""
    X = _data_matrix(data)
    if X.shape[0] > max_sample:
        rng = np.random.default_rng(seed)
        X = X[rng.choice(X.shape[0], size=max_sample, replace=False)]
    dists = cdist(X, X, metric="cityblock")
    return float(np.median(dists[np.triu_indices(X.shape[0], k=1)]))


def pearson(a, b) -> float:
    """Sample Pearson correlation coefficient of two equal-length sequences."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("pearson needs two 1-D sequences of equal length")
    if a.shape[0] < 2:
        raise ValueError("pearson needs at least 2 points")
    da = a - a.mean()
    db = b - b.mean()
    ssa = (da * da).sum()
    ssb = (db * db).sum()
    if ssa == 0 or ssb == 0:
        raise ValueError("zero variance input")
    return float((da * db).sum() / np.sqrt(ssa * ssb))


def nk_sweep(data, queries, depth_values, bits_values, seeds,
             aggregator: str = "gmean", bandwidth: float | None = None) -> list[dict]:
    """Correlation of sketch estimates vs. the exact oracle over a grid.

    Fits one partitioner per (depth, bits, seed) cell and correlates its
    estimates against the brute-force oracle at the shared bandwidth.
    Returns rows ``{"N": depth, "K": bits, "seed": seed, "pearson": r}``
    suitable for CSV output and plotting.
    """
    depth_values = list(depth_values)
    bits_values = list(bits_values)
    seeds = list(seeds)
    if not depth_values or not bits_values or not seeds:
        raise ValueError("empty sweep grid")
    X = _data_matrix(data)
    Q = as_float_matrix(queries, "queries")
    if bandwidth is None:
        bandwidth = median_l1_bandwidth(X)
    truth = brute_force_kde(X, Q, bandwidth=bandwidth).estimates

    rows = []
    for depth in depth_values:
        for bits in bits_values:
            for seed in seeds:
                part = DLSHPartitioner(depth=depth, bits=bits, seed=seed).fit(X)
                est = emde_density(part, X, Q, aggregator).estimates
                rows.append({
                    "N": int(depth), "K": int(bits), "seed": int(seed),
                    "pearson": pearson(est, truth),
                })
    return rows
