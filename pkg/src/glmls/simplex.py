"""Euclidean projection onto the probability simplex.

The projection clips each coordinate at a common threshold: p = max(v - theta, 0)
with theta chosen so the surviving coordinates sum to 1.  Sorting finds the
support size in O(k log k); the pivot-based O(k) variant is not worth its
constant factor at the class counts this package sees.
"""

from __future__ import annotations

import numpy as np


def project_rows(V: np.ndarray) -> np.ndarray:
    """Project each row of V onto the simplex {p >= 0, sum p = 1}."""
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {V.shape}")
    if not np.all(np.isfinite(V)):
        raise ValueError("cannot project non-finite values")
    n, k = V.shape
    if k == 0:
        raise ValueError("need at least one coordinate")
    U = np.sort(V, axis=1)[:, ::-1]
    css = np.cumsum(U, axis=1)
    j = np.arange(1, k + 1)
    # Largest j with u_(j) - (css_j - 1)/j > 0; at least 1 since u_(1) is max.
    positive = U - (css - 1.0) / j > 0
    rho = np.count_nonzero(positive, axis=1)
    theta = (css[np.arange(n), rho - 1] - 1.0) / rho
    return np.maximum(V - theta[:, None], 0.0)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Project a single vector onto the probability simplex."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    return project_rows(v[None, :])[0]
