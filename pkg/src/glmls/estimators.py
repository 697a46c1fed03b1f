"""Estimator wrappers so the solvers compose with pipelines and model selection.

The functional API in ``solvers`` works on target matrices; these classes
speak the fit/predict protocol: labels in, labels out, with ``classes_``,
``decision_function``, and a ``trace_`` recording the training run.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .features import CalibrationBasis, make_generator
from .glm import make_link
from .solvers import (
    calibrated_least_squares,
    generalized_least_squares,
    gradient_descent,
    stagewise,
)
from .validation import as_matrix, as_targets, check_feature_dim


class _LeastSquaresClassifierBase(BaseEstimator, ClassifierMixin):
    def _encode_targets(self, X, y):
        X = as_matrix(X)
        Y, classes = as_targets(y)
        if classes is None:
            raise ValueError(
                "estimators take label vectors; pass target matrices to the "
                "functional solvers instead"
            )
        if len(classes) < 2:
            raise ValueError("need at least two classes")
        self.classes_ = classes
        self.n_features_in_ = X.shape[1]
        return X, Y

    def _fitted_model(self):
        model = getattr(self, "model_", None)
        if model is None:
            raise NotFittedError(
                f"{type(self).__name__} must be fitted before prediction"
            )
        return model

    def decision_function(self, X):
        """Mean predictions, one score per class."""
        model = self._fitted_model()
        X = as_matrix(X)
        check_feature_dim(X, self.n_features_in_)
        return model.predict_scores(X)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]


class GeneralizedLeastSquaresClassifier(_LeastSquaresClassifierBase):
    """Preconditioned iterated least squares under a chosen link.

    link='identity' is one-shot linear regression of the one-hot targets;
    link='softmax' (alias 'logistic') is multiclass logistic regression
    trained without line searches or step tuning.
    """

    def __init__(
        self,
        link: str = "softmax",
        n_iter: int = 100,
        ridge: float = 0.0,
        lipschitz: float | None = None,
        early_stop: bool = False,
    ):
        self.link = link
        self.n_iter = n_iter
        self.ridge = ridge
        self.lipschitz = lipschitz
        self.early_stop = early_stop

    def fit(self, X, y):
        X, Y = self._encode_targets(X, y)
        self.link_ = make_link(self.link, self.lipschitz)
        self.model_, self.trace_ = generalized_least_squares(
            X, Y, self.link_, n_iter=self.n_iter, ridge=self.ridge,
            early_stop=self.early_stop,
        )
        return self


class GradientDescentClassifier(_LeastSquaresClassifierBase):
    """Plain gradient descent under the same losses; the conditioning baseline."""

    def __init__(
        self,
        link: str = "softmax",
        n_iter: int = 100,
        step: float | None = None,
        lipschitz: float | None = None,
        early_stop: bool = False,
    ):
        self.link = link
        self.n_iter = n_iter
        self.step = step
        self.lipschitz = lipschitz
        self.early_stop = early_stop

    def fit(self, X, y):
        X, Y = self._encode_targets(X, y)
        self.link_ = make_link(self.link, self.lipschitz)
        self.model_, self.trace_ = gradient_descent(
            X, Y, self.link_, n_iter=self.n_iter, step=self.step,
            early_stop=self.early_stop,
        )
        return self


class CalibratedLeastSquaresClassifier(_LeastSquaresClassifierBase):
    """Alternating residual fits and polynomial recalibration of predictions."""

    def __init__(
        self,
        basis_degree: int = 3,
        n_iter: int = 30,
        ridge: float = 0.0,
        early_stop: bool = False,
    ):
        self.basis_degree = basis_degree
        self.n_iter = n_iter
        self.ridge = ridge
        self.early_stop = early_stop

    def fit(self, X, y):
        X, Y = self._encode_targets(X, y)
        self.basis_ = CalibrationBasis.polynomial(self.basis_degree)
        self.model_, self.trace_ = calibrated_least_squares(
            X, Y, basis=self.basis_, n_iter=self.n_iter, ridge=self.ridge,
            early_stop=self.early_stop,
        )
        return self

    def predict_proba(self, X):
        """Predictions are already simplex rows, so they serve as probabilities."""
        return self.decision_function(X)


class StagewiseClassifier(_LeastSquaresClassifierBase):
    """Residual fitting on generated feature blocks, one block per stage.

    ``generator`` names the block source: 'rff' (fresh random Fourier
    features each stage), 'subset-random' / 'subset-gradient' (columns of X
    without replacement), or 'identity' (the whole matrix once).  For 'rff',
    ``bandwidth`` may be 'median' to resolve the kernel scale from the
    training rows at fit time.
    """

    def __init__(
        self,
        generator: str = "rff",
        block_size: int = 512,
        n_stages: int = 10,
        inner: str = "linear",
        ridge: float = 0.0,
        inner_iterations: int = 50,
        bandwidth="median",
        n_passes: int = 1,
        seed: int = 0,
        early_stop: bool = False,
    ):
        self.generator = generator
        self.block_size = block_size
        self.n_stages = n_stages
        self.inner = inner
        self.ridge = ridge
        self.inner_iterations = inner_iterations
        self.bandwidth = bandwidth
        self.n_passes = n_passes
        self.seed = seed
        self.early_stop = early_stop

    def _make_generator(self, X):
        params = {"seed": self.seed, "n_passes": self.n_passes}
        if self.generator == "rff":
            from .features import median_bandwidth

            bw = (
                median_bandwidth(X, seed=self.seed)
                if self.bandwidth == "median"
                else float(self.bandwidth)
            )
            params["bandwidth"] = bw
        return make_generator(self.generator, **params)

    def fit(self, X, y):
        X, Y = self._encode_targets(X, y)
        gen = self._make_generator(X)
        self.model_, self.trace_ = stagewise(
            X, Y, gen, block_size=self.block_size, n_stages=self.n_stages,
            inner=self.inner, ridge=self.ridge,
            inner_iterations=self.inner_iterations, early_stop=self.early_stop,
        )
        return self
