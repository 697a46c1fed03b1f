"""Second-moment accumulation, SPD factorization, and spectrum summaries.

The iterated least-squares solvers precondition every update with the inverse
of the feature second moment (1/n) sum_i x_i x_i^T.  That matrix does not
depend on the weights, so it is accumulated and factored exactly once per
training run and the factorization is reused across iterations.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack


class NumericalError(RuntimeError):
    """A linear-algebra step failed in a way that retrying cannot fix."""


@dataclass(frozen=True)
class SecondMoment:
    """Empirical second moment (1/n) X^T X with an optional ridge term.

    ``matrix`` is the unridged d x d moment; ``ridge`` is added to the
    diagonal at factorization time only.
    """

    matrix: np.ndarray
    n: int
    ridge: float = 0.0

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def accumulate_second_moment(X, ridge: float = 0.0) -> SecondMoment:
    """Accumulate (1/n) X^T X.

    Sparse inputs are supported but the result is dense: the cost is O(d^2)
    memory regardless of sparsity, which is the reason the stagewise solver
    works on small feature blocks instead of the full matrix.
    """
    if ridge < 0:
        raise ValueError(f"ridge must be nonnegative, got {ridge}")
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot accumulate a second moment from zero rows")
    if sp.issparse(X):
        M = (X.T @ X).toarray() / n
    else:
        X = np.asarray(X, dtype=np.float64)
        M = X.T @ X / n
    M = (M + M.T) / 2.0
    return SecondMoment(matrix=M, n=n, ridge=float(ridge))


def merge_second_moments(a: SecondMoment, b: SecondMoment) -> SecondMoment:
    """Combine per-chunk moments into the moment of the concatenated data.

    The merge is the sample-size-weighted average, so chunked accumulation
    (and therefore parallel accumulation) agrees with a single pass.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.ridge != b.ridge:
        raise ValueError("cannot merge moments with different ridge settings")
    n = a.n + b.n
    M = (a.n * a.matrix + b.n * b.matrix) / n
    return SecondMoment(matrix=M, n=n, ridge=a.ridge)


class SpdFactor:
    """Cholesky factor of (moment + ridge * I), reusable across solves."""

    def __init__(self, chol: np.ndarray, ridge_used: float, ridge_substituted: bool):
        self._chol = chol
        self.ridge_used = ridge_used
        self.ridge_substituted = ridge_substituted

    @property
    def dim(self) -> int:
        return self._chol.shape[0]

    def solve(self, B: np.ndarray) -> np.ndarray:
        """Solve (moment + ridge * I) Z = B for Z (B is d x m or d-vector)."""
        B = np.asarray(B, dtype=np.float64)
        squeeze = B.ndim == 1
        if squeeze:
            B = B[:, None]
        Z, info = lapack.dpotrs(self._chol, np.asfortranarray(B), lower=1)
        if info != 0:
            raise NumericalError(f"triangular solve failed (lapack info {info})")
        return Z[:, 0] if squeeze else Z


def factor_spd(moment: SecondMoment, auto_ridge: bool = False) -> SpdFactor:
    """Factor moment.matrix + ridge * I.

    With ``auto_ridge`` and ridge == 0, a failed factorization falls back to
    ridge = 1e-8 * trace / d and a warning reports the substitution.  Without
    it, failure raises and names the offending pivot.
    """
    d = moment.dim
    ridge = moment.ridge

    def attempt(lam: float):
        A = moment.matrix.copy()
        if lam:
            A[np.diag_indices_from(A)] += lam
        c, info = lapack.dpotrf(np.asfortranarray(A), lower=1)
        return c, info

    c, info = attempt(ridge)
    substituted = False
    if info > 0 and auto_ridge and ridge == 0.0:
        fallback = 1e-8 * max(np.trace(moment.matrix) / d, 1.0)
        warnings.warn(
            f"second moment not positive definite at ridge 0; "
            f"substituting ridge {fallback:.3e}",
            RuntimeWarning,
            stacklevel=2,
        )
        ridge = fallback
        substituted = True
        c, info = attempt(ridge)
    if info > 0:
        raise NumericalError(
            f"second moment is not positive definite: leading minor of order "
            f"{info} is nonpositive (pass ridge > 0 to regularize)"
        )
    if info < 0:
        raise NumericalError(f"illegal value in dpotrf argument {-info}")
    return SpdFactor(c, ridge_used=ridge, ridge_substituted=substituted)


def solve_spd(moment: SecondMoment, B: np.ndarray) -> np.ndarray:
    """Solve (moment.matrix + ridge * I) Z = B with a residual guarantee.

    Up to two steps of iterative refinement push the backward error
    ||B - A Z|| / (||A|| ||Z|| + ||B||) below 100 * d * eps; failing that
    is a sign the system is numerically singular at the current ridge.
    """
    factor = factor_spd(moment, auto_ridge=False)
    B = np.asarray(B, dtype=np.float64)
    A = moment.matrix
    if moment.ridge:
        A = A + moment.ridge * np.eye(moment.dim)
    a_norm = np.linalg.norm(A)
    b_norm = np.linalg.norm(B)
    rel_tol = 100.0 * moment.dim * np.finfo(np.float64).eps

    def tolerance(Z: np.ndarray) -> float:
        return rel_tol * (a_norm * np.linalg.norm(Z) + b_norm)

    Z = factor.solve(B)
    for _ in range(2):
        R = B - A @ Z
        if np.linalg.norm(R) <= tolerance(Z):
            return Z
        Z = Z + factor.solve(R)
    if np.linalg.norm(B - A @ Z) > tolerance(Z):
        raise NumericalError(
            "SPD solve failed to reach the residual tolerance; "
            "the system is too ill-conditioned at this ridge"
        )
    return Z


@dataclass(frozen=True)
class SpectrumReport:
    """Top singular values of a data matrix and the spread proxy sigma_2/sigma_r."""

    singular_values: np.ndarray
    condition_proxy: float
    rows_used: int
    method: str

    def to_dict(self) -> dict:
        proxy = self.condition_proxy
        return {
            "singular_values": [float(s) for s in self.singular_values],
            "condition_proxy": None if np.isnan(proxy) else float(proxy),
            "rows_used": self.rows_used,
            "method": self.method,
        }


# Above this many entries, exact dense SVD is replaced by a randomized sketch.
_DENSE_SVD_MAX_ENTRIES = 4_000_000


def top_singular_values(
    X, r: int, max_rows: int = 10_000, seed: int = 0
) -> SpectrumReport:
    """Top r singular values of X, subsampling rows above ``max_rows``.

    Small inputs get an exact dense SVD; large ones a randomized sketch,
    which is adequate for the sigma_2/sigma_r spread proxy but not for
    tight tail accuracy.  The proxy is NaN when r < 2 or sigma_r == 0.
    """
    n, d = X.shape
    if not 1 <= r <= min(n, d):
        raise ValueError(f"need 1 <= r <= min(n, d) = {min(n, d)}, got r={r}")
    rows_used = n
    if n > max_rows:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(n, size=max_rows, replace=False))
        X = X[idx]
        rows_used = max_rows

    if X.shape[0] * X.shape[1] <= _DENSE_SVD_MAX_ENTRIES:
        A = X.toarray() if sp.issparse(X) else np.asarray(X, dtype=np.float64)
        s = np.linalg.svd(A, compute_uv=False)[:r]
        method = "dense"
    elif r <= min(X.shape) - 1:
        from sklearn.utils.extmath import randomized_svd

        _, s, _ = randomized_svd(
            X, n_components=r, n_iter=7, random_state=seed
        )
        method = "randomized"
    else:
        raise ValueError(
            f"r={r} needs the exact path but the matrix is too large to densify"
        )

    if r >= 2 and s[r - 1] > 0:
        proxy = float(s[1] / s[r - 1])
    else:
        proxy = float("nan")
    return SpectrumReport(
        singular_values=np.asarray(s, dtype=np.float64),
        condition_proxy=proxy,
        rows_used=rows_used,
        method=method,
    )
