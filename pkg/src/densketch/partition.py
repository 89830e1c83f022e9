"""Manifold partitioners: density-dependent LSH and a geometry-blind baseline.

A fitted :class:`DLSHPartitioner` holds ``depth`` independent partitionings of
an embedding manifold, each splitting the data into at most ``2**bits``
regions via hyperplanes whose biases are drawn from the empirical quantile
function of the data projections. Every cut therefore lands inside the data's
projection range and splits non-empty mass, unlike classic random-projection
LSH whose offsets ignore the data distribution.

:func:`fit_random_codes` is the ablation baseline: uniform bucket assignments
keyed by item id, with no metric prior at all.
"""

from __future__ import annotations

import hashlib

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .embeddings import EmbeddingTable
from .serialize import read_blob, write_blob
from .validation import as_float_matrix

# Quantile draws are clamped away from 0 and 1 so no hyperplane degenerates
# to an empty side on either half-space.
QUANTILE_CLAMP = (0.05, 0.95)


class CodesMatrix:
    """Per-item region indices: one row per item, one column per depth level.

    Entries lie in ``[0, width)``. The row for an item is its address in a
    sketch: at depth level ``d`` the item occupies bucket ``codes[row, d]``.
    """

    def __init__(self, ids, codes, width: int):
        codes = np.asarray(codes, dtype=np.int64)
        ids = [str(i) for i in ids]
        if codes.ndim != 2 or codes.shape[0] != len(ids):
            raise ValueError(f"codes shape {codes.shape} does not match {len(ids)} ids")
        if width < 1:
            raise ValueError("width must be >= 1")
        if codes.size and (codes.min() < 0 or codes.max() >= width):
            raise ValueError(f"codes must lie in [0, {width})")
        index = {item: row for row, item in enumerate(ids)}
        if len(index) != len(ids):
            raise ValueError("duplicate item ids")
        self.ids = ids
        self.codes = codes
        self.codes.setflags(write=False)
        self.width = int(width)
        self._index = index

    @property
    def depth(self) -> int:
        return self.codes.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, item_id) -> bool:
        return str(item_id) in self._index

    def row(self, item_id) -> np.ndarray:
        try:
            return self.codes[self._index[str(item_id)]]
        except KeyError:
            raise KeyError(f"unknown item id {item_id!r}") from None

    def index_of(self, item_id) -> int:
        return self._index[str(item_id)]


def _empirical_quantile(sorted_values: np.ndarray, u: float) -> float:
    """Linear-interpolation quantile of an ascending sample at level ``u``."""
    n = sorted_values.shape[0]
    pos = u * (n - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    return float(sorted_values[lo] + frac * (sorted_values[hi] - sorted_values[lo]))


class DLSHPartitioner(TransformerMixin, BaseEstimator):
    """Density-dependent LSH partitioner over an embedding manifold.

    Each of ``depth`` independent partitionings consists of ``bits``
    hyperplanes. Hyperplane directions are unit vectors drawn from a seeded
    isotropic Gaussian; each bias is the empirical quantile, at a seeded
    uniform level, of the data's projections onto that direction. An item's
    region index per depth level packs the ``bits`` sign tests into an
    integer, reduced modulo ``width``.

    Parameters
    ----------
    depth : int
        Number of independent partitionings (sketch depth).
    bits : int
        Hyperplanes per partitioning; a level has at most ``2**bits`` regions.
    width : int or None
        Buckets per depth level. Defaults to ``2**bits``; when smaller,
        region indices are reduced modulo ``width``.
    seed : int
        Seed for directions and quantile levels; fitting is deterministic.
    modality : str
        Label carried through to artifacts for layout checks.

    Attributes
    ----------
    directions_ : ndarray of shape (depth, bits, dim)
        Unit hyperplane normals.
    biases_ : ndarray of shape (depth, bits)
        Hyperplane offsets along each normal.
    dim_ : int
        Dimensionality of the fitted manifold.
    """

    def __init__(self, depth: int = 10, bits: int = 7, width: int | None = None,
                 seed: int = 0, modality: str = "default"):
        self.depth = depth
        self.bits = bits
        self.width = width
        self.seed = seed
        self.modality = modality

    @property
    def effective_width(self) -> int:
        return int(self.width) if self.width is not None else 2 ** int(self.bits)

    def fit(self, X, y=None):
        """Fit hyperplanes to the rows of ``X`` (shape ``(n_items, dim)``)."""
        X = as_float_matrix(X)
        if self.depth < 1 or self.bits < 1:
            raise ValueError("depth and bits must be >= 1")
        if self.effective_width < 1:
            raise ValueError("width must be >= 1")
        if X.shape[0] < 2:
            raise ValueError("need at least 2 items to place quantile biases")

        rng = np.random.default_rng(self.seed)
        directions = rng.standard_normal((self.depth, self.bits, X.shape[1]))
        directions /= np.linalg.norm(directions, axis=2, keepdims=True)
        levels = np.clip(rng.uniform(size=(self.depth, self.bits)), *QUANTILE_CLAMP)

        # projections[n, d, i] = x_n . r_{d,i}
        projections = np.einsum("nj,dij->ndi", X, directions)
        biases = np.empty((self.depth, self.bits))
        for d in range(self.depth):
            for i in range(self.bits):
                biases[d, i] = _empirical_quantile(
                    np.sort(projections[:, d, i]), levels[d, i]
                )

        self.directions_ = directions
        self.biases_ = biases
        self.dim_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        """Region codes for the rows of ``X``: shape ``(n, depth)``, in [0, width).

        Bit ``i`` of a level's code is 1 iff the projection lies strictly
        above the bias (ties fall on the 0 side).
        """
        check_is_fitted(self, "directions_")
        X = as_float_matrix(X)
        if X.shape[1] != self.dim_:
            raise ValueError(f"expected dim {self.dim_}, got {X.shape[1]}")
        projections = np.einsum("nj,dij->ndi", X, self.directions_)
        hashes = projections > self.biases_[None, :, :]
        weights = (2 ** np.arange(self.bits, dtype=np.int64))
        codes = (hashes * weights).sum(axis=2)
        return codes % self.effective_width


def fit_dlsh(table: EmbeddingTable, depth: int, bits: int, seed: int,
             width: int | None = None) -> DLSHPartitioner:
    """Fit a :class:`DLSHPartitioner` on an embedding table."""
    part = DLSHPartitioner(depth=depth, bits=bits, width=width, seed=seed,
                           modality=table.modality)
    return part.fit(table.vectors)


def assign_codes(partitioner: DLSHPartitioner, table: EmbeddingTable) -> CodesMatrix:
    """Region codes for every item of ``table``, rows in table order."""
    codes = partitioner.transform(table.vectors)
    return CodesMatrix(table.ids, codes, partitioner.effective_width)


def _keyed_bucket(seed: int, depth_index: int, item_id: str, width: int) -> int:
    digest = hashlib.blake2b(
        f"{seed}|{depth_index}|{item_id}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big") % width


def fit_random_codes(item_ids, depth: int, width: int, seed: int) -> CodesMatrix:
    """Uniform random bucket codes with no metric prior.

    Codes are keyed by ``(seed, depth level, item_id)``, so an item keeps its
    row across runs and across any reordering of the id list.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    if depth < 1:
        raise ValueError("depth must be >= 1")
    item_ids = [str(i) for i in item_ids]
    if len(set(item_ids)) != len(item_ids):
        raise ValueError("duplicate item ids")
    codes = np.empty((len(item_ids), depth), dtype=np.int64)
    for row, item in enumerate(item_ids):
        for d in range(depth):
            codes[row, d] = _keyed_bucket(seed, d, item, width)
    return CodesMatrix(item_ids, codes, width)


def save_partitioning(partitioner: DLSHPartitioner, path) -> None:
    """Write a fitted partitioner; reloads bit-exactly."""
    check_is_fitted(partitioner, "directions_")
    meta = {
        "kind": "dlsh_partitioning",
        "depth": int(partitioner.depth),
        "bits": int(partitioner.bits),
        "width": int(partitioner.effective_width),
        "seed": int(partitioner.seed),
        "modality": partitioner.modality,
        "dim": int(partitioner.dim_),
    }
    write_blob(path, meta, {
        "directions": partitioner.directions_,
        "biases": partitioner.biases_,
    })


def load_partitioning(path) -> DLSHPartitioner:
    meta, arrays = read_blob(path)
    if meta.get("kind") != "dlsh_partitioning":
        raise ValueError(f"{path}: not a partitioning artifact")
    part = DLSHPartitioner(depth=meta["depth"], bits=meta["bits"],
                           width=meta["width"], seed=meta["seed"],
                           modality=meta["modality"])
    part.directions_ = arrays["directions"]
    part.biases_ = arrays["biases"]
    part.dim_ = int(meta["dim"])
    return part


def save_codes(codes: CodesMatrix, path) -> None:
    """Write codes as text: a header line, then ``<item_id> <c1> ... <cN>``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# densketch codes v1 depth={codes.depth} width={codes.width}\n")
        for item_id, row in zip(codes.ids, codes.codes):
            fh.write(item_id + " " + " ".join(str(int(c)) for c in row) + "\n")


def load_codes(path) -> CodesMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("# densketch codes v1"):
            raise ValueError(f"{path}: missing codes header")
        fields = dict(part.split("=") for part in header.split()[4:])
        width = int(fields["width"])
        ids, rows = [], []
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            ids.append(parts[0])
            rows.append([int(c) for c in parts[1:]])
    return CodesMatrix(ids, np.array(rows, dtype=np.int64), width)
