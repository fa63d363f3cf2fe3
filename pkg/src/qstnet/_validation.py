"""Input checks shared by the estimator wrappers."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length

from .exceptions import ShapeError
from .states import Family


def check_grids(X, side):
    """Accept ``(n, side*side)`` or ``(n, side, side)`` Husimi data; return 2-D float64."""
    X = np.asarray(X, dtype=float) if not hasattr(X, "values") else np.asarray(X.values, dtype=float)
    if X.ndim == 3:
        X = X.reshape(len(X), -1)
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != side * side:
        raise ShapeError(f"expected {side * side} grid values per sample, got {X.shape[1]}")
    return X


def check_labels(y, n=None):
    y = np.asarray(y)
    if y.ndim != 1:
        raise ShapeError(f"labels must be 1-D, got shape {y.shape}")
    out = np.array([int(Family.parse(v)) for v in y], dtype=np.int64)
    if n is not None:
        check_consistent_length(np.empty(n), out)
    return out


def check_densities(rhos, dim, n=None):
    rhos = np.asarray(rhos, dtype=complex)
    if rhos.ndim == 2:
        rhos = rhos[None]
    if rhos.shape[1:] != (dim, dim):
        raise ShapeError(f"density matrices must be {dim}x{dim}, got {rhos.shape[1:]}")
    if not np.all(np.isfinite(rhos)):
        raise ValueError("density matrices contain NaN or inf")
    if n is not None:
        check_consistent_length(np.empty(n), rhos)
    return rhos


def check_features(features, n=None):
    f = np.asarray(features, dtype=complex)
    if f.ndim != 2 or f.shape[1] != 3:
        raise ShapeError(f"features must have shape (n, 3), got {f.shape}")
    if n is not None:
        check_consistent_length(np.empty(n), f)
    return f
