"""Input validation helpers shared by the estimators and solver routines."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def is_sparse(X) -> bool:
    return sp.issparse(X)


def as_matrix(X, name: str = "X", allow_sparse: bool = True):
    """Coerce to a 2-D float64 array (or CSR matrix) and reject non-finite values."""
    if sp.issparse(X):
        if not allow_sparse:
            raise ValueError(f"{name} must be a dense array")
        X = X.tocsr().astype(np.float64)
        if not np.all(np.isfinite(X.data)):
            raise ValueError(f"{name} contains non-finite values")
        return X
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


def check_same_rows(X, Y, xname: str = "X", yname: str = "Y") -> None:
    if X.shape[0] != Y.shape[0]:
        raise ValueError(
            f"{xname} and {yname} disagree on the number of rows: "
            f"{X.shape[0]} vs {Y.shape[0]}"
        )


def check_feature_dim(X, expected: int) -> None:
    if X.shape[1] != expected:
        raise ValueError(
            f"feature dimension mismatch: model expects {expected} features, "
            f"got {X.shape[1]}"
        )


def check_simplex_rows(Y, name: str = "Y", tol: float = 1e-8) -> None:
    """Every row must be a probability vector: nonnegative, summing to 1."""
    Y = np.asarray(Y)
    if np.min(Y) < -tol:
        raise ValueError(f"{name} has negative entries (min {np.min(Y):.3g})")
    sums = Y.sum(axis=1)
    bad = np.argmax(np.abs(sums - 1.0))
    if abs(sums[bad] - 1.0) > tol:
        raise ValueError(
            f"{name} rows must sum to 1; row {bad} sums to {sums[bad]!r}"
        )


def as_targets(y, n_classes: int | None = None):
    """Turn labels into a one-hot matrix, or validate an already-soft target matrix.

    Accepts integer class labels (shape (n,)) or a matrix of simplex rows
    (soft labels are fine).  Returns (Y, classes) where classes is None for
    matrix input.
    """
    y = np.asarray(y)
    if y.ndim == 1:
        classes = np.unique(y)
        k = n_classes if n_classes is not None else len(classes)
        if n_classes is not None and len(classes) > n_classes:
            raise ValueError(
                f"got {len(classes)} distinct labels but n_classes={n_classes}"
            )
        index = {c: i for i, c in enumerate(classes)}
        Y = np.zeros((y.shape[0], k))
        for r, label in enumerate(y):
            Y[r, index[label]] = 1.0
        return Y, classes
    Y = np.asarray(y, dtype=np.float64)
    if Y.ndim != 2:
        raise ValueError(f"targets must be 1-D labels or a 2-D matrix, got shape {Y.shape}")
    check_simplex_rows(Y, name="targets")
    return Y, None
