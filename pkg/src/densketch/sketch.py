"""Additive density sketches: encode, aggregate, normalize, decay, decode.

A sketch summarizes a weighted multiset of items as ``depth`` independent
histograms of ``width`` buckets each, stored as one flat non-negative vector
in depth-major order: bucket ``(d, c)`` lives at index ``d * width + c``.
Each depth level is a separate histogram over one partitioning of the
manifold; ensembling the per-level estimates at decode time is what buys
resolution beyond a single histogram.

All operations are pure functions; sketches are plain data and safe to share.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .partition import CodesMatrix
from .serialize import read_blob, write_blob
from .validation import check_nonnegative

AGGREGATORS = ("gmean", "min", "mean", "hmean")


@dataclass(frozen=True)
class Sketch:
    """Dense density sketch of shape ``depth x width``, flattened depth-major."""

    depth: int
    width: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (self.depth * self.width,):
            raise ValueError(
                f"values length {values.shape} != depth*width = {self.depth * self.width}"
            )
        object.__setattr__(self, "values", values)

    def grid(self) -> np.ndarray:
        """View of the values as a (depth, width) array."""
        return self.values.reshape(self.depth, self.width)


def zero_sketch(depth: int, width: int) -> Sketch:
    return Sketch(depth, width, np.zeros(depth * width))


def _check_same_shape(a: Sketch, b: Sketch) -> None:
    if (a.depth, a.width) != (b.depth, b.width):
        raise ValueError(
            f"sketch shape mismatch: {(a.depth, a.width)} vs {(b.depth, b.width)}"
        )


def encode_item(codes: CodesMatrix, item_id) -> Sketch:
    """One-hot sketch of a single item: exactly one 1 per depth level.

    The 1 for depth level ``d`` sits at flat index ``d * width + code[d]``.
    """
    row = codes.row(item_id)
    values = np.zeros(codes.depth * codes.width)
    values[np.arange(codes.depth) * codes.width + row] = 1.0
    return Sketch(codes.depth, codes.width, values)


def encode_items(codes: CodesMatrix, item_ids, weights=None) -> Sketch:
    """Weighted aggregate sketch of many items in one pass.

    Equivalent to ``aggregate([encode_item(codes, i) for i in item_ids],
    weights)`` but without materializing per-item sketches. Items are folded
    in the given order.
    """
    item_ids = list(item_ids)
    if weights is None:
        weights = np.ones(len(item_ids))
    weights = check_nonnegative(weights)
    if len(weights) != len(item_ids):
        raise ValueError("weights length must match item_ids")
    values = np.zeros(codes.depth * codes.width)
    offsets = np.arange(codes.depth) * codes.width
    for item_id, w in zip(item_ids, weights):
        values[offsets + codes.row(item_id)] += w
    return Sketch(codes.depth, codes.width, values)


def aggregate(sketches, weights) -> Sketch:
    """Elementwise weighted sum of sketches sharing one (depth, width) shape.

    Addition is the whole compositional story: a multiset's sketch is the sum
    of its items' sketches, so aggregates can also be built incrementally
    from a stream. Sketches are folded left to right in list order.
    """
    sketches = list(sketches)
    if not sketches:
        raise ValueError("aggregate needs at least one sketch")
    weights = check_nonnegative(weights)
    if len(weights) != len(sketches):
        raise ValueError("weights length must match sketches")
    first = sketches[0]
    out = np.zeros_like(first.values)
    for s, w in zip(sketches, weights):
        _check_same_shape(first, s)
        out += w * s.values
    return Sketch(first.depth, first.width, out)


def normalize(s: Sketch, norm: str = "l1") -> Sketch:
    """Normalize each depth-level slice independently along the width axis.

    Every depth level is a separate histogram, so normalization never mixes
    levels. All-zero slices pass through unchanged.
    """
    if norm not in ("l1", "l2"):
        raise ValueError(f"norm must be 'l1' or 'l2', got {norm!r}")
    grid = s.grid().copy()
    if norm == "l1":
        denom = np.abs(grid).sum(axis=1, keepdims=True)
    else:
        denom = np.sqrt((grid * grid).sum(axis=1, keepdims=True))
    np.divide(grid, denom, out=grid, where=denom > 0)
    return Sketch(s.depth, s.width, grid.reshape(-1))


def decay(s: Sketch, alpha: float, w: float, dt: float) -> Sketch:
    """Exponential time decay: every value multiplied by ``alpha * w**dt``.

    ``alpha`` is the per-application decay and ``w`` the per-time-unit decay;
    ``dt`` is elapsed time in whatever clock the caller uses (the session
    pipeline counts event steps).
    """
    if not (0 < alpha <= 1) or not (0 < w <= 1):
        raise ValueError("alpha and w must lie in (0, 1]")
    if dt < 0:
        raise ValueError("dt must be >= 0")
    return Sketch(s.depth, s.width, s.values * (alpha * w ** dt))


def reduce_depthwise(per_depth: np.ndarray, aggregator: str) -> np.ndarray:
    """Collapse per-depth estimates ``(n_items, depth)`` to one score per item.

    ``gmean`` short-circuits to 0 whenever any depth value is exactly 0 (the
    faithful limit; no epsilon inflation). ``hmean`` does the same. With
    depth 1 every aggregator is the identity and the value is returned
    unchanged.
    """
    if aggregator not in AGGREGATORS:
        raise ValueError(f"unknown aggregator {aggregator!r}")
    per_depth = np.asarray(per_depth, dtype=np.float64)
    if per_depth.ndim != 2:
        raise ValueError("expected (n_items, depth) array")
    if per_depth.shape[1] == 1:
        return per_depth[:, 0].copy()
    if aggregator == "min":
        return per_depth.min(axis=1)
    if aggregator == "mean":
        return per_depth.mean(axis=1)
    has_zero = (per_depth <= 0).any(axis=1)
    out = np.zeros(per_depth.shape[0])
    safe = ~has_zero
    if safe.any():
        if aggregator == "gmean":
            out[safe] = np.exp(np.log(per_depth[safe]).mean(axis=1))
        else:  # hmean
            out[safe] = per_depth.shape[1] / (1.0 / per_depth[safe]).sum(axis=1)
    return out


def gather_depthwise(s: Sketch, codes: CodesMatrix) -> np.ndarray:
    """Per-item, per-depth sketch values: shape ``(n_items, depth)``.

    Row ``i`` holds the ``depth`` bucket values addressed by item ``i``'s
    code row -- the independent density estimates prior to ensembling.
    """
    if (s.depth, s.width) != (codes.depth, codes.width):
        raise ValueError(
            f"sketch shape {(s.depth, s.width)} does not match codes "
            f"{(codes.depth, codes.width)}"
        )
    flat = np.arange(codes.depth) * codes.width + codes.codes
    return s.values[flat]


def decode_scores(s: Sketch, codes: CodesMatrix, aggregator: str = "gmean") -> dict:
    """Unnormalized per-item scores from a sketch.

    For each item, gathers the ``depth`` bucket values addressed by its codes
    and reduces them with ``aggregator``. Scores do not sum to 1 across
    items; only their ordering is meaningful for retrieval.
    """
    scores = reduce_depthwise(gather_depthwise(s, codes), aggregator)
    return dict(zip(codes.ids, scores.tolist()))


def one_hot_matrix(codes: CodesMatrix) -> np.ndarray:
    """Dense expansion of a codes matrix: rows are single-item sketches."""
    n = len(codes)
    B = np.zeros((n, codes.depth * codes.width))
    flat = np.arange(codes.depth) * codes.width + codes.codes
    B[np.arange(n)[:, None], flat] = 1.0
    return B


def batch_decode(s: Sketch, onehot: np.ndarray) -> np.ndarray:
    """Per-item depth-wise estimates via dense matrix arithmetic.

    ``onehot`` has one row per item and ``depth * width`` columns in the
    depth-major layout. Agrees exactly with
    :func:`gather_depthwise` -- it is the vectorized execution of the same
    lookup, provided for batch/dense backends.
    """
    onehot = np.asarray(onehot, dtype=np.float64)
    if onehot.ndim != 2 or onehot.shape[1] != s.depth * s.width:
        raise ValueError(
            f"one-hot matrix must have {s.depth * s.width} columns, got {onehot.shape}"
        )
    stacked = onehot.reshape(-1, s.depth, s.width)
    return np.einsum("ndw,dw->nd", stacked, s.grid())


def save_sketch(s: Sketch, path) -> None:
    write_blob(path, {"kind": "sketch", "depth": s.depth, "width": s.width},
               {"values": s.values})


def load_sketch(path) -> Sketch:
    meta, arrays = read_blob(path)
    if meta.get("kind") != "sketch":
        raise ValueError(f"{path}: not a sketch artifact")
    return Sketch(meta["depth"], meta["width"], arrays["values"])
