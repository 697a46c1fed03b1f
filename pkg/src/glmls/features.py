"""Feature generation: random Fourier features, PCA, subset blocks, calibration bases.

Everything random is a pure function of an explicit seed (and, for stagewise
blocks, the stage index), so feature banks are never stored with models: they
are regenerated bit-for-bit at prediction time from the recorded seeds.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import pdist
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .validation import as_matrix, check_feature_dim


# ---------------------------------------------------------------------------
# random Fourier features for the Gaussian kernel exp(-||x - x'||^2 / s)


def median_bandwidth(
    X, sample_size: int = 1000, seed: int = 0, squared: bool = True
) -> float:
    """Median pairwise distance among a row subsample, the usual kernel scale.

    With ``squared`` (the default) the median is taken over squared Euclidean
    distances, matching the kernel's exponent ||x - x'||^2 / s directly;
    unsquared medians are available for callers who prefer that convention.
    """
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least two rows to compute pairwise distances")
    if n > sample_size:
        idx = np.sort(np.random.default_rng(seed).choice(n, sample_size, replace=False))
        X = X[idx]
    if sp.issparse(X):
        X = X.toarray()
    X = np.asarray(X, dtype=np.float64)
    d2 = pdist(X, "sqeuclidean")
    med = float(np.median(d2 if squared else np.sqrt(d2)))
    if med <= 0:
        raise ValueError("degenerate bandwidth: sampled rows are identical")
    return med


def rff_frequencies(
    dim_in: int, n_features: int, bandwidth: float, seed
) -> tuple[np.ndarray, np.ndarray]:
    """Frequency matrix (dim_in x m) and phase offsets (m,) for a given seed.

    Frequencies are N(0, 2/bandwidth) per coordinate and offsets uniform on
    [0, 2pi), so that sqrt(2/m) cos(x^T omega + b) features satisfy
    E[z(x) . z(x')] = exp(-||x - x'||^2 / bandwidth).
    """
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((dim_in, n_features)) * np.sqrt(2.0 / bandwidth)
    offsets = rng.uniform(0.0, 2.0 * np.pi, n_features)
    return omega, offsets


def rff_transform(X, omega: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    m = omega.shape[1]
    U = X @ omega
    if sp.issparse(U):
        U = U.toarray()
    return np.sqrt(2.0 / m) * np.cos(np.asarray(U) + offsets)


def rff_block(X, n_features: int, bandwidth: float, seed) -> np.ndarray:
    """A block of random Fourier features, fully determined by the seed."""
    omega, offsets = rff_frequencies(X.shape[1], n_features, bandwidth, seed)
    return rff_transform(X, omega, offsets)


# ---------------------------------------------------------------------------
# exact centered PCA


@dataclass(frozen=True)
class PcaBasis:
    mean: np.ndarray
    components: np.ndarray  # d x r, orthonormal columns
    singular_values: np.ndarray

    def project(self, X) -> np.ndarray:
        X = as_matrix(X, allow_sparse=False)
        check_feature_dim(X, self.mean.shape[0])
        return (X - self.mean) @ self.components


def _fix_component_signs(V: np.ndarray) -> np.ndarray:
    # Deterministic orientation: largest-magnitude entry of each column positive.
    which = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[which, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def pca_fit_project(X, r: int) -> tuple[PcaBasis, np.ndarray]:
    """Center X and project onto the top r principal directions (exact, no whitening).

    When r exceeds the centered rank, only the rank directions are kept and a
    warning says so.  Sparse input is rejected: centering densifies anyway.
    """
    X = as_matrix(X, allow_sparse=False)
    n, d = X.shape
    if not 1 <= r <= d:
        raise ValueError(f"need 1 <= r <= {d}, got r={r}")
    mean = X.mean(axis=0)
    Xc = X - mean
    if n > 5 * d:
        # Spectrum via the d x d Gram matrix: same subspace, much cheaper.
        evals, evecs = np.linalg.eigh(Xc.T @ Xc)
        order = np.argsort(evals)[::-1]
        evals = np.clip(evals[order], 0.0, None)
        s = np.sqrt(evals)
        V = evecs[:, order]
    else:
        _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
        V = Vt.T
    rank = int(np.sum(s > s[0] * max(n, d) * np.finfo(np.float64).eps)) if s.size else 0
    r_eff = min(r, max(rank, 1))
    if r_eff < r:
        warnings.warn(
            f"requested {r} components but the centered rank is {r_eff}; keeping {r_eff}",
            RuntimeWarning,
            stacklevel=2,
        )
    V = _fix_component_signs(V[:, :r_eff])
    basis = PcaBasis(mean=mean, components=V, singular_values=s[:r_eff].copy())
    return basis, Xc @ V


# ---------------------------------------------------------------------------
# calibration bases: named elementwise maps applied to prediction vectors


@dataclass(frozen=True)
class CalibrationBasis:
    """Elementwise functions applied to predictions during calibration.

    ``apply`` evaluates every function on an n x k prediction matrix and
    concatenates the blocks, giving n x (k * len(functions)) features in
    function-major column order.
    """

    names: tuple[str, ...]
    functions: tuple[Callable[[np.ndarray], np.ndarray], ...]

    def __post_init__(self):
        if len(self.names) != len(self.functions):
            raise ValueError("names and functions must align")
        if not self.functions:
            raise ValueError("basis must contain at least one function")

    @classmethod
    def polynomial(cls, degree: int = 3) -> "CalibrationBasis":
        """Powers y, y^2, ..., y^degree; degree >= 1 so identity is included."""
        if degree < 1:
            raise ValueError("degree must be at least 1")
        names = tuple(f"y^{p}" for p in range(1, degree + 1))
        functions = tuple((lambda Z, p=p: np.power(Z, p)) for p in range(1, degree + 1))
        return cls(names=names, functions=functions)

    @property
    def has_identity(self) -> bool:
        return "y^1" in self.names or "identity" in self.names

    @property
    def size(self) -> int:
        return len(self.functions)

    def apply(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=np.float64)
        return np.hstack([f(Z) for f in self.functions])


def apply_basis(basis: CalibrationBasis, Z: np.ndarray) -> np.ndarray:
    return basis.apply(Z)


# ---------------------------------------------------------------------------
# stagewise feature generators


@dataclass(frozen=True)
class BlockSpec:
    """Everything needed to rebuild one stage's feature block on new data."""

    kind: str
    columns: np.ndarray | None = None
    rff: dict | None = None

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.columns is not None:
            out["columns"] = [int(c) for c in self.columns]
        if self.rff is not None:
            out["rff"] = dict(self.rff)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "BlockSpec":
        cols = d.get("columns")
        return cls(
            kind=d["kind"],
            columns=None if cols is None else np.asarray(cols, dtype=np.intp),
            rff=d.get("rff"),
        )


def materialize_block(X, spec: BlockSpec):
    """Rebuild the feature block described by ``spec`` on a new design matrix."""
    if spec.kind == "identity":
        return X
    if spec.kind in ("subset-random", "subset-gradient", "subset-fixed"):
        B = X[:, spec.columns]
        return np.asarray(B.toarray()) if sp.issparse(B) else np.asarray(B)
    if spec.kind == "rff":
        p = spec.rff
        check_feature_dim(X, p["dim_in"])
        omega, offsets = rff_frequencies(
            p["dim_in"], p["n_features"], p["bandwidth"], seed=[p["seed"], p["stage"]]
        )
        return rff_transform(X, omega, offsets)
    raise ValueError(f"unknown block kind {spec.kind!r}")


class FeatureGenerator:
    """Stateful block source for the stagewise solver.

    ``next_block(block_size, X, residuals)`` returns (features, BlockSpec) or
    None when exhausted.  The BlockSpec, not the features, is what models
    persist.
    """

    kind: str = "abstract"

    def next_block(self, block_size: int, X, residuals=None):
        raise NotImplementedError


class IdentityGenerator(FeatureGenerator):
    """The whole design matrix as a single block; exhausted afterwards."""

    kind = "identity"

    def __init__(self):
        self._done = False

    def next_block(self, block_size: int, X, residuals=None):
        if self._done:
            return None
        self._done = True
        return X, BlockSpec(kind="identity")


class FixedSubsetGenerator(FeatureGenerator):
    """Explicit column blocks, consumed in the given order."""

    kind = "subset-fixed"

    def __init__(self, blocks: Sequence[Sequence[int]]):
        self._blocks = [np.asarray(b, dtype=np.intp) for b in blocks]
        self._cursor = 0

    def next_block(self, block_size: int, X, residuals=None):
        if self._cursor >= len(self._blocks):
            return None
        cols = self._blocks[self._cursor]
        self._cursor += 1
        spec = BlockSpec(kind=self.kind, columns=cols)
        return materialize_block(X, spec), spec


class SubsetGenerator(FeatureGenerator):
    """Feature-column blocks without replacement, in random or gradient order.

    Random order reshuffles at each pass.  Gradient order ranks the columns by
    the norm of the residual-correlation (1/n) X_j^T R at the start of each
    pass and consumes them in that order; the ranking is recomputed only at
    pass boundaries.
    """

    def __init__(self, kind: str = "random", seed: int = 0, n_passes: int = 1):
        if kind not in ("random", "gradient"):
            raise ValueError(f"kind must be 'random' or 'gradient', got {kind!r}")
        if n_passes < 1:
            raise ValueError("n_passes must be at least 1")
        self.kind = f"subset-{kind}"
        self._order_kind = kind
        self.seed = seed
        self.n_passes = n_passes
        self._pass = 0
        self._order: np.ndarray | None = None
        self._cursor = 0

    def _rank(self, X, residuals) -> np.ndarray:
        d = X.shape[1]
        if self._order_kind == "random":
            rng = np.random.default_rng([self.seed, self._pass])
            return rng.permutation(d)
        if residuals is None:
            raise ValueError("gradient-ordered blocks need the current residuals")
        C = X.T @ residuals
        if sp.issparse(C):
            C = C.toarray()
        scores = np.linalg.norm(np.asarray(C) / X.shape[0], axis=1)
        return np.argsort(-scores, kind="stable")

    def next_block(self, block_size: int, X, residuals=None):
        if block_size < 1:
            raise ValueError("block_size must be at least 1")
        if self._order is None:
            self._order = self._rank(X, residuals)
        if self._cursor >= len(self._order):
            self._pass += 1
            if self._pass >= self.n_passes:
                return None
            self._order = self._rank(X, residuals)
            self._cursor = 0
        cols = self._order[self._cursor : self._cursor + block_size]
        self._cursor += len(cols)
        spec = BlockSpec(kind=self.kind, columns=cols)
        return materialize_block(X, spec), spec


class RFFGenerator(FeatureGenerator):
    """A fresh random Fourier block per stage; never exhausted.

    Stage t draws its frequencies from seed (seed, t), so blocks are
    independent across stages yet exactly reproducible.
    """

    kind = "rff"

    def __init__(self, bandwidth: float, seed: int = 0):
        if bandwidth <= 0:
            raise ValueError(f"bandwidth must be positive, got {bandwidth}")
        self.bandwidth = float(bandwidth)
        self.seed = seed
        self._stage = 0

    def next_block(self, block_size: int, X, residuals=None):
        spec = BlockSpec(
            kind="rff",
            rff={
                "seed": self.seed,
                "stage": self._stage,
                "n_features": int(block_size),
                "bandwidth": self.bandwidth,
                "dim_in": int(X.shape[1]),
            },
        )
        self._stage += 1
        return materialize_block(X, spec), spec


def make_generator(kind: str, **params) -> FeatureGenerator:
    """Generator factory used by the CLI and by model deserialization."""
    if kind == "identity":
        return IdentityGenerator()
    if kind == "rff":
        return RFFGenerator(bandwidth=params["bandwidth"], seed=params.get("seed", 0))
    if kind in ("subset-random", "subset-gradient"):
        return SubsetGenerator(
            kind=kind.removeprefix("subset-"),
            seed=params.get("seed", 0),
            n_passes=params.get("n_passes", 1),
        )
    if kind == "subset-fixed":
        return FixedSubsetGenerator(params["blocks"])
    raise ValueError(f"unknown generator kind {kind!r}")


# ---------------------------------------------------------------------------
# transformer wrappers


class RandomFourierFeatures(BaseEstimator, TransformerMixin):
    """Transformer producing sqrt(2/m) cos(x^T omega + b) features.

    bandwidth='median' resolves the kernel scale from the training rows at
    fit time via the median squared pairwise distance.
    """

    def __init__(self, n_features: int = 1024, bandwidth="median", seed: int = 0):
        self.n_features = n_features
        self.bandwidth = bandwidth
        self.seed = seed

    def fit(self, X, y=None):
        X = as_matrix(X)
        if self.bandwidth == "median":
            self.bandwidth_ = median_bandwidth(X, seed=self.seed)
        else:
            self.bandwidth_ = float(self.bandwidth)
        self.n_features_in_ = X.shape[1]
        self.omega_, self.offsets_ = rff_frequencies(
            X.shape[1], self.n_features, self.bandwidth_, self.seed
        )
        return self

    def transform(self, X):
        if not hasattr(self, "omega_"):
            raise NotFittedError("RandomFourierFeatures must be fitted before transform")
        X = as_matrix(X)
        check_feature_dim(X, self.n_features_in_)
        return rff_transform(X, self.omega_, self.offsets_)


class PrincipalComponents(BaseEstimator, TransformerMixin):
    """Exact centered PCA projection (no whitening)."""

    def __init__(self, n_components: int = 50):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = as_matrix(X, allow_sparse=False)
        self.basis_, _ = pca_fit_project(X, self.n_components)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        if not hasattr(self, "basis_"):
            raise NotFittedError("PrincipalComponents must be fitted before transform")
        return self.basis_.project(X)

    def fit_transform(self, X, y=None):
        X = as_matrix(X, allow_sparse=False)
        self.basis_, projected = pca_fit_project(X, self.n_components)
        self.n_features_in_ = X.shape[1]
        return projected
