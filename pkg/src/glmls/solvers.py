"""Training routines: preconditioned iterated least squares and its relatives.

All solvers share the same trace layout: record t=0 describes the initial
state (zero weights / zero predictions) and records t=1..T the iterates.
Losses are the link's calibrated loss; for the solvers that maintain
predictions rather than a single weight matrix, the loss column is the
identity-link loss of the current predictions.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .features import BlockSpec, CalibrationBasis, FeatureGenerator, materialize_block
from .glm import LinkSpec, loss as glm_loss, scores as glm_scores, softmax_link
from .linalg import NumericalError, accumulate_second_moment, factor_spd
from .simplex import project_rows
from .validation import as_matrix, check_feature_dim, check_same_rows

EARLY_STOP_WINDOW = 10
EARLY_STOP_TOL = 1e-12


@dataclass
class IterationRecord:
    t: int
    loss: float
    mse: float
    seconds: float

    def to_dict(self) -> dict:
        return {"t": self.t, "loss": self.loss, "mse": self.mse, "seconds": self.seconds}


@dataclass
class TrainTrace:
    """Per-iteration loss, mean squared residual, and wall time.

    ``records[0]`` is the initial state (t=0); the remaining entries are the
    iterates.  ``initial_weights_zero`` is needed by the convergence-bound
    monitors, whose guarantees assume a zero start.
    """

    records: list[IterationRecord] = field(default_factory=list)
    ridge_used: float = 0.0
    early_stopped: bool = False
    generator_exhausted: bool = False
    initial_weights_zero: bool = True

    @property
    def initial(self) -> IterationRecord:
        return self.records[0]

    @property
    def iterations(self) -> list[IterationRecord]:
        return self.records[1:]

    def losses(self) -> np.ndarray:
        """Loss at t = 0, 1, ..., T."""
        return np.array([r.loss for r in self.records])

    def mses(self) -> np.ndarray:
        return np.array([r.mse for r in self.records])

    def to_dict(self) -> dict:
        return {
            "initial": self.initial.to_dict(),
            "iterations": [r.to_dict() for r in self.iterations],
            "ridge_used": self.ridge_used,
            "early_stopped": self.early_stopped,
            "generator_exhausted": self.generator_exhausted,
        }


def _mse(Yhat: np.ndarray, Y: np.ndarray) -> float:
    D = Yhat - Y
    return float(np.mean(np.sum(D * D, axis=1)))


def _prediction_loss(Yhat: np.ndarray, Y: np.ndarray) -> float:
    # Identity-link loss of the current predictions used as scores.
    return float(0.5 * np.mean(np.sum(Yhat * Yhat, axis=1)) - np.mean(np.sum(Y * Yhat, axis=1)))


def _should_stop(losses: list[float]) -> bool:
    if len(losses) < EARLY_STOP_WINDOW + 1:
        return False
    return losses[-EARLY_STOP_WINDOW - 1] - losses[-1] < EARLY_STOP_TOL


def _check_finite_loss(value: float, t: int) -> None:
    if not np.isfinite(value):
        raise NumericalError(f"loss became non-finite at iteration {t}")


def _validate_xy(X, Y):
    X = as_matrix(X)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2:
        raise ValueError(f"targets must be an n x k matrix, got shape {Y.shape}")
    check_same_rows(X, Y)
    return X, Y


@dataclass
class WeightMatrix:
    """A fitted linear map plus the link it was trained under."""

    W: np.ndarray
    link: LinkSpec
    feature_meta: dict = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]

    @property
    def n_features(self) -> int:
        return self.W.shape[1]

    def predict_scores(self, X) -> np.ndarray:
        """Mean predictions g(W x) for each row of X."""
        X = as_matrix(X)
        check_feature_dim(X, self.n_features)
        return self.link.mean(glm_scores(self.W, X))


def generalized_least_squares(
    X,
    Y,
    link: LinkSpec,
    n_iter: int,
    ridge: float = 0.0,
    w0: np.ndarray | None = None,
    early_stop: bool = False,
) -> tuple[WeightMatrix, TrainTrace]:
    """Minimize the calibrated loss by second-moment-preconditioned updates.

    Each iteration moves W^T by -(1/L) (second moment + ridge I)^{-1} times
    the loss gradient transposed.  The second moment does not depend on W,
    so it is factored once and reused; each iteration costs one prediction
    pass plus back-substitutions.  Under the identity link the first
    iteration already solves the least-squares normal equations, so the
    solver is a one-shot linear regression in that case.
    """
    X, Y = _validate_xy(X, Y)
    n, d = X.shape
    k = Y.shape[1]
    if n_iter < 0:
        raise ValueError("n_iter must be nonnegative")

    moment = accumulate_second_moment(X, ridge)
    factor = factor_spd(moment, auto_ridge=True)

    if w0 is None:
        W = np.zeros((k, d))
        w0_zero = True
    else:
        W = np.array(w0, dtype=np.float64)
        if W.shape != (k, d):
            raise ValueError(f"w0 must have shape {(k, d)}, got {W.shape}")
        w0_zero = not np.any(W)

    trace = TrainTrace(
        ridge_used=factor.ridge_used, initial_weights_zero=w0_zero
    )
    step = 1.0 / link.lipschitz

    U = glm_scores(W, X)
    P = link.mean(U)
    cur_loss = float(np.mean(link.potential(U)) - np.mean(np.sum(Y * U, axis=1)))
    trace.records.append(IterationRecord(0, cur_loss, _mse(P, Y), 0.0))
    losses = [cur_loss]

    for t in range(1, n_iter + 1):
        tic = time.perf_counter()
        G = np.asarray((P - Y).T @ X) / n
        W = W - step * factor.solve(G.T).T
        U = glm_scores(W, X)
        P = link.mean(U)
        cur_loss = float(np.mean(link.potential(U)) - np.mean(np.sum(Y * U, axis=1)))
        _check_finite_loss(cur_loss, t)
        losses.append(cur_loss)
        trace.records.append(
            IterationRecord(t, cur_loss, _mse(P, Y), time.perf_counter() - tic)
        )
        if early_stop and _should_stop(losses):
            trace.early_stopped = True
            break

    return WeightMatrix(W=W, link=link), trace


def _top_moment_eigenvalue(X) -> float:
    if sp.issparse(X):
        from scipy.sparse.linalg import svds

        s = svds(X.astype(np.float64), k=1, return_singular_vectors=False)
        return float(s[0] ** 2 / X.shape[0])
    moment = accumulate_second_moment(X)
    return float(np.linalg.eigvalsh(moment.matrix)[-1])


def gradient_descent(
    X,
    Y,
    link: LinkSpec,
    n_iter: int,
    w0: np.ndarray | None = None,
    step: float | None = None,
    early_stop: bool = False,
) -> tuple[WeightMatrix, TrainTrace]:
    """Plain gradient descent baseline with the safe step 1/(L sigma_max).

    Kept for conditioning comparisons: unlike the preconditioned updates, its
    progress degrades with the spread of the feature second moment.
    """
    X, Y = _validate_xy(X, Y)
    n, d = X.shape
    k = Y.shape[1]

    if step is None:
        smax = _top_moment_eigenvalue(X)
        if smax <= 0:
            raise NumericalError("feature second moment is zero; no valid step size")
        step = 1.0 / (link.lipschitz * smax)

    if w0 is None:
        W = np.zeros((k, d))
        w0_zero = True
    else:
        W = np.array(w0, dtype=np.float64)
        if W.shape != (k, d):
            raise ValueError(f"w0 must have shape {(k, d)}, got {W.shape}")
        w0_zero = not np.any(W)

    trace = TrainTrace(initial_weights_zero=w0_zero)
    U = glm_scores(W, X)
    P = link.mean(U)
    cur_loss = float(np.mean(link.potential(U)) - np.mean(np.sum(Y * U, axis=1)))
    trace.records.append(IterationRecord(0, cur_loss, _mse(P, Y), 0.0))
    losses = [cur_loss]

    for t in range(1, n_iter + 1):
        tic = time.perf_counter()
        G = np.asarray((P - Y).T @ X) / n
        W = W - step * G
        U = glm_scores(W, X)
        P = link.mean(U)
        cur_loss = float(np.mean(link.potential(U)) - np.mean(np.sum(Y * U, axis=1)))
        _check_finite_loss(cur_loss, t)
        losses.append(cur_loss)
        trace.records.append(
            IterationRecord(t, cur_loss, _mse(P, Y), time.perf_counter() - tic)
        )
        if early_stop and _should_stop(losses):
            trace.early_stopped = True
            break

    return WeightMatrix(W=W, link=link), trace


def _ls_fit(B, R: np.ndarray, ridge: float) -> np.ndarray:
    """Ridge least-squares coefficients of targets R on features B, shape k x p."""
    moment = accumulate_second_moment(B, ridge)
    factor = factor_spd(moment, auto_ridge=True)
    rhs = np.asarray(B.T @ R) / B.shape[0]
    return factor.solve(rhs).T


@dataclass
class CalibrationStage:
    residual_weights: np.ndarray  # k x d, fit of residuals on raw features
    calibration_weights: np.ndarray  # k x (k * basis size), refit on basis features


@dataclass
class PredictionState:
    """Training-set prediction state after the last calibration stage."""

    predictions: np.ndarray  # n x k, on the simplex (post-projection)
    presimplex: np.ndarray  # n x k, calibrated output before projection
    scores: np.ndarray  # n x k, residual-corrected predictions z
    stage: int


@dataclass
class CalibratedModel:
    """Alternating residual-fit / recalibration model.

    Prediction replays the trained per-stage weights on new rows in training
    order; nothing is refit at test time.
    """

    stages: list[CalibrationStage]
    basis: CalibrationBasis
    n_features: int
    n_classes: int
    state: PredictionState | None = None

    def predict_scores(self, X) -> np.ndarray:
        X = as_matrix(X)
        check_feature_dim(X, self.n_features)
        Yhat = np.zeros((X.shape[0], self.n_classes))
        for st in self.stages:
            Z = Yhat + np.asarray(X @ st.residual_weights.T)
            F = self.basis.apply(Z)
            Yhat = project_rows(F @ st.calibration_weights.T)
        return Yhat


def calibrated_least_squares(
    X,
    Y,
    basis: CalibrationBasis | None = None,
    n_iter: int = 30,
    ridge: float = 0.0,
    early_stop: bool = False,
    keep_history: bool = False,
) -> tuple[CalibratedModel, TrainTrace]:
    """Alternate residual least squares with a least-squares recalibration.

    Each iteration (i) fits the current residuals on the raw features and
    adds the fit to the predictions, then (ii) refits the labels from
    scratch on basis expansions of those predictions and (iii) projects each
    row back onto the simplex.  The basis must contain the identity map:
    that is what makes step (ii) at least as good as keeping step (i), so
    the training mean squared residual cannot increase (exactly so at
    ridge 0).

    With ``keep_history`` the model carries per-stage (scores, presimplex)
    pairs so invariants can be checked after the fact.
    """
    X, Y = _validate_xy(X, Y)
    n, d = X.shape
    k = Y.shape[1]
    if basis is None:
        basis = CalibrationBasis.polynomial(3)
    if not basis.has_identity:
        raise ValueError(
            "calibration basis must contain the identity map; "
            "without it the recalibration step can move predictions backwards"
        )

    moment_x = accumulate_second_moment(X, ridge)
    factor_x = factor_spd(moment_x, auto_ridge=True)

    Yhat = np.zeros((n, k))  # predictions of the zero weight matrix
    Z = Yhat
    stages: list[CalibrationStage] = []
    history: list[tuple[np.ndarray, np.ndarray]] = []
    trace = TrainTrace(ridge_used=factor_x.ridge_used)
    trace.records.append(
        IterationRecord(0, _prediction_loss(Yhat, Y), _mse(Yhat, Y), 0.0)
    )
    losses = [trace.records[0].loss]

    for t in range(1, n_iter + 1):
        tic = time.perf_counter()
        R = Y - Yhat
        Wx = factor_x.solve(np.asarray(X.T @ R) / n).T
        Z = Yhat + np.asarray(X @ Wx.T)

        F = basis.apply(Z)
        Wcal = _ls_fit(F, Y, ridge)  # calibration refit from scratch each stage
        Ypre = F @ Wcal.T
        Yhat = project_rows(Ypre)

        stages.append(CalibrationStage(residual_weights=Wx, calibration_weights=Wcal))
        if keep_history:
            history.append((Z, Ypre))

        cur_loss = _prediction_loss(Yhat, Y)
        _check_finite_loss(cur_loss, t)
        losses.append(cur_loss)
        trace.records.append(
            IterationRecord(t, cur_loss, _mse(Yhat, Y), time.perf_counter() - tic)
        )
        if early_stop and _should_stop(losses):
            trace.early_stopped = True
            break

    model = CalibratedModel(
        stages=stages,
        basis=basis,
        n_features=d,
        n_classes=k,
        state=PredictionState(
            predictions=Yhat, presimplex=Ypre if stages else Yhat, scores=Z,
            stage=len(stages),
        ),
    )
    if keep_history:
        model.history = history
    return model, trace


@dataclass
class StageRecord:
    block: BlockSpec
    weights: np.ndarray  # k x p, or k x (p + k) when augmented with predictions
    augmented: bool = False


@dataclass
class StagewiseModel:
    """Additive model built block by block on residuals.

    Only block specifications (column indices or feature seeds) and stage
    weights are stored; prediction regenerates each block on the new rows
    and accumulates the linear fits in training order.
    """

    stages: list[StageRecord]
    inner: str
    n_features: int
    n_classes: int

    def predict_scores(self, X) -> np.ndarray:
        X = as_matrix(X)
        check_feature_dim(X, self.n_features)
        Yhat = np.zeros((X.shape[0], self.n_classes))
        for st in self.stages:
            B = materialize_block(X, st.block)
            if st.augmented:
                B = np.hstack([np.asarray(B.toarray()) if sp.issparse(B) else np.asarray(B), Yhat])
            Yhat = Yhat + np.asarray(B @ st.weights.T)
        return Yhat


INNER_FITS = ("linear", "logistic", "calibrated-linear")


def stagewise(
    X,
    Y,
    generator: FeatureGenerator,
    block_size: int,
    n_stages: int,
    inner: str = "linear",
    ridge: float = 0.0,
    inner_iterations: int = 50,
    early_stop: bool = False,
) -> tuple[StagewiseModel, TrainTrace]:
    """Fit residuals on generated feature blocks, accumulating predictions.

    Per stage: draw a block from the generator, fit the current residuals on
    it with the chosen inner solver, and add the block's linear fit to the
    running predictions.  Inner fits:

    - 'linear': one least-squares solve on the block;
    - 'logistic': softmax iterated least squares, ``inner_iterations`` loops;
    - 'calibrated-linear': least squares on the block with the current
      predictions appended as extra features (skipped while the predictions
      are identically zero, where they carry no information).

    A generator that runs out of blocks ends training early; the trace notes
    the exhaustion.
    """
    X, Y = _validate_xy(X, Y)
    n, d = X.shape
    k = Y.shape[1]
    if inner not in INNER_FITS:
        raise ValueError(f"inner must be one of {INNER_FITS}, got {inner!r}")

    Yhat = np.zeros((n, k))
    stages: list[StageRecord] = []
    trace = TrainTrace()
    trace.records.append(
        IterationRecord(0, _prediction_loss(Yhat, Y), _mse(Yhat, Y), 0.0)
    )
    losses = [trace.records[0].loss]

    for t in range(1, n_stages + 1):
        tic = time.perf_counter()
        R = Y - Yhat
        drawn = generator.next_block(block_size, X, residuals=R)
        if drawn is None:
            trace.generator_exhausted = True
            break
        B, spec = drawn

        augmented = False
        if inner == "logistic":
            fit, _ = generalized_least_squares(
                B, R, softmax_link(), n_iter=inner_iterations, ridge=ridge
            )
            Wt = fit.W
            Bfit = B
        else:
            Bfit = B
            if inner == "calibrated-linear" and np.any(Yhat):
                Bd = np.asarray(B.toarray()) if sp.issparse(B) else np.asarray(B)
                Bfit = np.hstack([Bd, Yhat])
                augmented = True
            Wt = _ls_fit(Bfit, R, ridge)

        Yhat = Yhat + np.asarray(Bfit @ Wt.T)
        stages.append(StageRecord(block=spec, weights=Wt, augmented=augmented))

        cur_loss = _prediction_loss(Yhat, Y)
        _check_finite_loss(cur_loss, t)
        losses.append(cur_loss)
        trace.records.append(
            IterationRecord(t, cur_loss, _mse(Yhat, Y), time.perf_counter() - tic)
        )
        if early_stop and _should_stop(losses):
            trace.early_stopped = True
            break

    model = StagewiseModel(stages=stages, inner=inner, n_features=d, n_classes=k)
    return model, trace


def predict(model, X) -> tuple[np.ndarray, np.ndarray]:
    """Scores and argmax labels for any fitted model object.

    Ties break toward the lowest class index.
    """
    scores = model.predict_scores(X)
    return scores, np.argmax(scores, axis=1)
