"""Multiclass GLM losses built from a convex potential.

A link is described by a convex potential Phi on score vectors together with
its gradient g, the mean function: the model predicts E[y|x] = g(Wx).  The
matching loss for one example is Phi(Wx) - y^T Wx, whose W-gradient is
(g(Wx) - y) x^T, so stationarity means the predicted means match the labels
in correlation with the features.

Sample losses and gradients are plain means over examples.  They are computed
with single BLAS reductions, so the summation order is fixed and repeated
evaluation is deterministic; parallel chunking, if ever added, must preserve
the chunk reduction order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .validation import as_matrix, as_targets, check_same_rows, check_simplex_rows


def log_sum_exp(U: np.ndarray) -> np.ndarray:
    """Row-wise log(sum(exp(u))) with max subtraction; scalar for 1-D input."""
    U = np.asarray(U, dtype=np.float64)
    m = np.max(U, axis=-1, keepdims=True)
    out = m[..., 0] + np.log(np.sum(np.exp(U - m), axis=-1))
    return out


def softmax(U: np.ndarray) -> np.ndarray:
    """Row-wise softmax, computed stably.  Output rows are probability vectors."""
    U = np.asarray(U, dtype=np.float64)
    E = np.exp(U - np.max(U, axis=-1, keepdims=True))
    return E / np.sum(E, axis=-1, keepdims=True)


def _invert_softmax(P: np.ndarray, min_entry: float = 1e-3) -> np.ndarray:
    """Score vectors z with softmax(z) = P, normalized to mean-zero rows.

    Softmax is invertible on the simplex interior up to a per-row constant;
    z = log p minus its row mean picks the mean-zero representative exactly.
    Rows with an entry below ``min_entry`` are outside the supported domain.
    """
    P = np.asarray(P, dtype=np.float64)
    if np.min(P) < min_entry:
        raise ValueError(
            f"softmax inversion needs all entries >= {min_entry}, "
            f"got min {np.min(P):.3g}"
        )
    Z = np.log(P)
    return Z - np.mean(Z, axis=-1, keepdims=True)


@dataclass(frozen=True)
class LinkSpec:
    """A link: convex potential, its gradient (the mean function), and curvature bounds.

    ``lipschitz`` bounds the largest eigenvalue of the potential's Hessian
    and ``strong_monotonicity`` the smallest; 0 means no lower curvature
    bound is claimed.  ``mean_inverse`` maps mean vectors back to scores and
    may be None when no inverse is available.
    """

    name: str
    potential: Callable[[np.ndarray], np.ndarray]
    mean: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    strong_monotonicity: float = 0.0
    mean_inverse: Callable[[np.ndarray], np.ndarray] | None = field(default=None)

    def __post_init__(self):
        if self.lipschitz <= 0:
            raise ValueError("lipschitz must be positive")
        if not 0 <= self.strong_monotonicity <= self.lipschitz:
            raise ValueError("need 0 <= strong_monotonicity <= lipschitz")


def identity_link() -> LinkSpec:
    """Potential 0.5 ||u||^2: the loss is least squares up to a constant."""
    return LinkSpec(
        name="identity",
        potential=lambda U: 0.5 * np.sum(np.square(U), axis=-1),
        mean=lambda U: np.asarray(U, dtype=np.float64),
        lipschitz=1.0,
        strong_monotonicity=1.0,
        mean_inverse=lambda P: np.asarray(P, dtype=np.float64),
    )


def softmax_link(lipschitz: float = 1.0) -> LinkSpec:
    """Potential log-sum-exp: the loss is multiclass logistic regression.

    lipschitz = 1 is the conventional safe bound.  The Hessian of log-sum-exp
    is diag(p) - p p^T whose largest eigenvalue never exceeds 1/2 (it is
    attained at p = (1/2, 1/2, 0, ...)), so 0.5 is also valid and gives a
    2x larger update step.  Softmax is not strongly monotone on all of R^k,
    so no global lower curvature bound is claimed.
    """
    return LinkSpec(
        name="softmax",
        potential=log_sum_exp,
        mean=softmax,
        lipschitz=lipschitz,
        strong_monotonicity=0.0,
        mean_inverse=_invert_softmax,
    )


def make_link(name: str, lipschitz: float | None = None) -> LinkSpec:
    """Link factory by name: 'identity' or 'softmax' (alias 'logistic')."""
    if name == "identity":
        return identity_link()
    if name in ("softmax", "logistic"):
        return softmax_link() if lipschitz is None else softmax_link(lipschitz)
    raise ValueError(f"unknown link {name!r}; expected 'identity' or 'softmax'")


@dataclass
class LabeledBatch:
    """A design matrix with simplex-row targets (one-hot or soft labels)."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        self.X = as_matrix(self.X, name="X")
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.Y.ndim != 2:
            raise ValueError(f"Y must be 2-dimensional, got shape {self.Y.shape}")
        check_same_rows(self.X, self.Y)
        check_simplex_rows(self.Y)

    @classmethod
    def from_labels(cls, X, y, n_classes: int | None = None) -> "LabeledBatch":
        Y, _ = as_targets(y, n_classes)
        return cls(X, Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return self.Y.shape[1]


def scores(W: np.ndarray, X) -> np.ndarray:
    """Score matrix with rows W x_i, i.e. X W^T (dense, n x k)."""
    S = X @ W.T
    return np.asarray(S)


def loss(link: LinkSpec, W: np.ndarray, X, Y: np.ndarray) -> float:
    """Sample loss (1/n) sum_i [Phi(W x_i) - y_i^T W x_i].

    Y may be any real matrix: the solvers fit residual targets that are not
    probability rows, and the formula is well defined for them too.
    """
    U = scores(W, X)
    return float(np.mean(link.potential(U)) - np.mean(np.sum(Y * U, axis=1)))


def loss_gradient(link: LinkSpec, W: np.ndarray, X, Y: np.ndarray) -> np.ndarray:
    """Gradient (1/n) sum_i (g(W x_i) - y_i) x_i^T, shape k x d."""
    U = scores(W, X)
    R = link.mean(U) - Y
    G = (R.T @ X) / X.shape[0]
    if sp.issparse(G):
        G = G.toarray()
    return np.asarray(G)
