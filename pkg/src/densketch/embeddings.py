"""Per-modality item embedding tables: loading, validation, and a test embedder.

The on-disk format is one item per line, whitespace separated, id first:

    <item_id> <f1> <f2> ... <fd>

Floats are written with shortest round-trip formatting, so save/load is
bit-exact. Production embeddings come from external systems; the propagation
embedder here exists so tests and toy experiments are self-contained.
"""

from __future__ import annotations

import numpy as np

from .serialize import format_float
from .validation import as_float_matrix


class EmbeddingError(ValueError):
    """Raised for malformed embedding files or invalid tables."""


class EmbeddingTable:
    """Immutable map from item id to a dense vector on one data manifold.

    Parameters
    ----------
    modality : str
        Name of the modality this table represents (e.g. ``"interactions"``).
    ids : sequence of str
        Unique item identifiers, one per row of ``vectors``.
    vectors : ndarray of shape (n_items, dim)
        Finite float vectors, all of the same dimension.
    """

    def __init__(self, modality: str, ids, vectors):
        vectors = as_float_matrix(vectors, "vectors")
        ids = [str(i) for i in ids]
        if len(ids) != vectors.shape[0]:
            raise EmbeddingError(
                f"{len(ids)} ids but {vectors.shape[0]} vector rows"
            )
        index = {item: row for row, item in enumerate(ids)}
        if len(index) != len(ids):
            raise EmbeddingError("duplicate item ids in embedding table")
        self.modality = modality
        self.ids = ids
        self.vectors = vectors
        self.vectors.setflags(write=False)
        self._index = index

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, item_id) -> bool:
        return str(item_id) in self._index

    def vector(self, item_id) -> np.ndarray:
        try:
            return self.vectors[self._index[str(item_id)]]
        except KeyError:
            raise KeyError(f"unknown item id {item_id!r}") from None

    def index_of(self, item_id) -> int:
        return self._index[str(item_id)]

    def subset(self, item_ids) -> "EmbeddingTable":
        """Table restricted to ``item_ids`` (order preserved, must all exist)."""
        rows = [self._index[str(i)] for i in item_ids]
        return EmbeddingTable(self.modality, [self.ids[r] for r in rows], self.vectors[rows])


def load_embeddings(path, modality: str) -> EmbeddingTable:
    """Parse an embedding text file into a validated table.

    Dimension is inferred from the first row. Errors (dimension mismatch,
    non-finite value, duplicate id) report the offending line number.
    """
    ids: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            item_id, fields = parts[0], parts[1:]
            if dim is None:
                dim = len(fields)
                if dim == 0:
                    raise EmbeddingError(f"{path}:{lineno}: row has no embedding values")
            if len(fields) != dim:
                raise EmbeddingError(
                    f"{path}:{lineno}: expected {dim} values, got {len(fields)}"
                )
            if item_id in seen:
                raise EmbeddingError(f"{path}:{lineno}: duplicate item id {item_id!r}")
            seen.add(item_id)
            try:
                vec = np.array([float(f) for f in fields], dtype=np.float64)
            except ValueError:
                raise EmbeddingError(f"{path}:{lineno}: unparseable float") from None
            if not np.isfinite(vec).all():
                raise EmbeddingError(f"{path}:{lineno}: non-finite value")
            ids.append(item_id)
            rows.append(vec)
    if not rows:
        raise EmbeddingError(f"{path}: empty embedding file")
    return EmbeddingTable(modality, ids, np.vstack(rows))


def save_embeddings(table: EmbeddingTable, path) -> None:
    """Write a table in the text format; load(save(T)) is bit-exact."""
    with open(path, "w", encoding="utf-8") as fh:
        for item_id, row in zip(table.ids, table.vectors):
            fh.write(item_id + " " + " ".join(format_float(v) for v in row) + "\n")


def synth_propagation_embedder(
    interactions, dim: int, iterations: int, seed: int, modality: str = "synthetic"
) -> EmbeddingTable:
    """Build a deterministic stand-in embedding table from co-interaction data.

    Items start as seeded random unit vectors; each iteration replaces an
    item's vector with the L2-normalized mean over all items sharing any
    context with it (including itself). Co-interacting items therefore drift
    together, which is all the downstream partitioner needs from an
    embedding: locally similar items end up close in cosine distance.

    Parameters
    ----------
    interactions : iterable of (context_id, item_id)
        Observed co-occurrences; order does not matter.
    dim : int
        Embedding dimension, >= 1.
    iterations : int
        Propagation rounds, >= 0. Zero returns the seeded random vectors.
    seed : int
        RNG seed; output is fully determined by (interactions, dim,
        iterations, seed).
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    interactions = [(str(c), str(i)) for c, i in interactions]
    if not interactions:
        raise EmbeddingError("empty interaction list")

    item_ids = sorted({item for _, item in interactions})
    index = {item: k for k, item in enumerate(item_ids)}

    context_members: dict[str, set[int]] = {}
    for ctx, item in interactions:
        context_members.setdefault(ctx, set()).add(index[item])
    neighbors = [set() for _ in item_ids]
    for members in context_members.values():
        for k in members:
            neighbors[k] |= members

    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((len(item_ids), dim))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)

    for _ in range(iterations):
        updated = np.empty_like(vectors)
        for k, nbrs in enumerate(neighbors):
            mean = vectors[sorted(nbrs)].mean(axis=0)
            norm = np.linalg.norm(mean)
            updated[k] = vectors[k] if norm == 0 else mean / norm
        vectors = updated

    return EmbeddingTable(modality, item_ids, vectors)
