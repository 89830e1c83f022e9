"""Input validation helpers shared across the estimator API."""

from __future__ import annotations

import numpy as np


def as_float_matrix(X, name: str = "X") -> np.ndarray:
    """Coerce to a finite, 2-D float64 array; raise ValueError otherwise."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {X.shape}")
    if X.size and not np.isfinite(X).all():
        raise ValueError(f"{name} contains non-finite values")
    return X


def as_float_vector(x, name: str = "x") -> np.ndarray:
    """Coerce to a finite, 1-D float64 array; raise ValueError otherwise."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {x.shape}")
    if x.size and not np.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite values")
    return x


def check_nonnegative(x, name: str = "weights") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size and x.min() < 0:
        raise ValueError(f"{name} must be non-negative")
    return x
