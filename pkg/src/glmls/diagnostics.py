"""Checks that the solvers behave the way the theory says they must.

The bound reports compare realized traces against closed-form convergence
envelopes; the majorization and duality checks probe the curvature facts
those envelopes rest on.  Everything reports values rather than asserting,
so the same machinery serves tests, the CLI, and ad-hoc investigation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .glm import LinkSpec, loss as glm_loss, loss_gradient
from .linalg import accumulate_second_moment
from .solvers import TrainTrace


# ---------------------------------------------------------------------------
# prediction quality


def classification_error(scores: np.ndarray, labels) -> float:
    """Fraction of rows whose argmax score misses the label.

    ``labels`` may be integer classes or a one-hot / soft matrix (argmax is
    taken).  Argmax ties break toward the lowest index, in scores and labels
    alike.
    """
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = np.argmax(labels, axis=1)
    if scores.shape[0] != labels.shape[0]:
        raise ValueError(
            f"scores and labels disagree on rows: {scores.shape[0]} vs {labels.shape[0]}"
        )
    return float(np.mean(np.argmax(scores, axis=1) != labels))


def confusion_counts(scores: np.ndarray, labels, n_classes: int | None = None) -> np.ndarray:
    """Counts[true, predicted] over all rows."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = np.argmax(labels, axis=1)
    pred = np.argmax(scores, axis=1)
    k = n_classes or scores.shape[1]
    out = np.zeros((k, k), dtype=np.int64)
    np.add.at(out, (labels, pred), 1)
    return out


# ---------------------------------------------------------------------------
# curvature probes


def mahalanobis_norm(W: np.ndarray, M: np.ndarray, validate: bool = True) -> float:
    """Sum over rows w of w^T M w, the squared metric the solvers descend in.

    With M = I this is the squared Frobenius norm.  ``validate`` checks that
    M is symmetric positive semidefinite (within 1e-10 relative).
    """
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    M = np.asarray(M, dtype=np.float64)
    if M.shape[0] != M.shape[1] or M.shape[0] != W.shape[1]:
        raise ValueError(f"shape mismatch: W is {W.shape}, M is {M.shape}")
    if validate:
        scale = max(1.0, float(np.max(np.abs(M))))
        if np.max(np.abs(M - M.T)) > 1e-10 * scale:
            raise ValueError("M must be symmetric")
        if np.linalg.eigvalsh(M)[0] < -1e-10 * scale:
            raise ValueError("M must be positive semidefinite")
    return float(np.sum((W @ M) * W))


@dataclass(frozen=True)
class MajorizationCheck:
    passed: bool
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


def check_majorization(
    link: LinkSpec,
    X,
    Y: np.ndarray,
    W1: np.ndarray,
    W2: np.ndarray,
    lipschitz: float | None = None,
    moment: np.ndarray | None = None,
    slack: float = 1e-10,
) -> MajorizationCheck:
    """Verify the quadratic upper model of the loss between two weight points.

    Checks loss(W1) <= loss(W2) + <grad(W2), W1 - W2> + (L/2) |W1 - W2|^2 in
    the second-moment metric.  Pass ``moment`` to amortize its accumulation
    across many pairs.
    """
    L = link.lipschitz if lipschitz is None else lipschitz
    M = accumulate_second_moment(X).matrix if moment is None else moment
    D = W1 - W2
    lhs = glm_loss(link, W1, X, Y)
    rhs = (
        glm_loss(link, W2, X, Y)
        + float(np.sum(loss_gradient(link, W2, X, Y) * D))
        + 0.5 * L * mahalanobis_norm(D, M, validate=False)
    )
    return MajorizationCheck(passed=lhs <= rhs + slack, lhs=lhs, rhs=rhs)


def sample_simplex_interior(
    k: int, n: int, seed: int = 0, min_entry: float = 1e-3
) -> np.ndarray:
    """Uniform-ish simplex samples pushed away from the boundary."""
    if not 0 < min_entry < 1.0 / k:
        raise ValueError(f"need 0 < min_entry < 1/k = {1.0 / k:.3g}")
    P = np.random.default_rng(seed).dirichlet(np.ones(k), size=n)
    m = 1.05 * min_entry
    return P * (1.0 - k * m) + m


@dataclass
class DualityReport:
    """Outcome of inverse-mean monotonicity checks on mean-space pairs.

    The inverse of the mean function must correlate with mean differences at
    least as strongly as 1/L and (when a lower curvature bound exists) at
    most 1/mu times the squared difference.
    """

    n_checked: int = 0
    n_skipped: int = 0
    lower_violations: int = 0
    upper_violations: int = 0
    upper_checked: int = 0
    worst_lower_margin: float = np.inf
    worst_upper_margin: float = np.inf

    @property
    def passed(self) -> bool:
        return self.lower_violations == 0 and self.upper_violations == 0


def check_dual_inequalities(
    link: LinkSpec, P: np.ndarray, Q: np.ndarray, slack: float = 1e-9
) -> DualityReport:
    """Check both inverse-map curvature inequalities on rows of (P, Q).

    Rows where the inverse map is undefined (outside the link's mean domain)
    are skipped and counted rather than failing.
    """
    if link.mean_inverse is None:
        raise ValueError(f"link {link.name!r} has no inverse mean map")
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    if P.shape != Q.shape:
        raise ValueError(f"pair shapes differ: {P.shape} vs {Q.shape}")

    has_upper = link.strong_monotonicity > 0
    report = DualityReport()
    for p, q in zip(P, Q):
        try:
            zp = link.mean_inverse(p)
            zq = link.mean_inverse(q)
        except ValueError:
            report.n_skipped += 1
            continue
        dp = p - q
        sq = float(np.dot(dp, dp))
        if sq == 0.0:
            report.n_skipped += 1
            continue
        ip = float(np.dot(zp - zq, dp))
        tol = slack * (1.0 + sq)
        report.n_checked += 1

        lower_margin = ip - sq / link.lipschitz
        report.worst_lower_margin = min(report.worst_lower_margin, lower_margin)
        if lower_margin < -tol:
            report.lower_violations += 1
        if has_upper:
            report.upper_checked += 1
            upper_margin = sq / link.strong_monotonicity - ip
            report.worst_upper_margin = min(report.worst_upper_margin, upper_margin)
            if upper_margin < -tol:
                report.upper_violations += 1
    return report


def estimate_link_condition(
    link: LinkSpec, U: np.ndarray, n_pairs: int = 2000, seed: int = 0
) -> tuple[float, float]:
    """Empirical curvature range of the mean map over realized score rows.

    Samples pairs (u, v) from the rows of U and returns the largest observed
    ratio ||g(u) - g(v)|| / ||u - v|| and the smallest observed
    <g(u) - g(v), u - v> / ||u - v||^2.  Restricting to the scores the data
    actually visits gives a finite effective curvature ratio even for links,
    like softmax, with no global lower curvature bound.
    """
    U = np.atleast_2d(np.asarray(U, dtype=np.float64))
    n = U.shape[0]
    if n < 2:
        raise ValueError("need at least two score rows")
    rng = np.random.default_rng(seed)
    ia = rng.integers(0, n, size=n_pairs)
    ib = rng.integers(0, n, size=n_pairs)
    keep = ia != ib
    ia, ib = ia[keep], ib[keep]
    Du = U[ia] - U[ib]
    Dg = link.mean(U[ia]) - link.mean(U[ib])
    nu = np.sum(Du * Du, axis=1)
    ok = nu > 0
    if not np.any(ok):
        raise ValueError("all sampled pairs coincide; cannot estimate curvature")
    nu = nu[ok]
    lips = float(np.max(np.sqrt(np.sum(Dg[ok] * Dg[ok], axis=1) / nu)))
    mono = float(np.min(np.sum(Dg[ok] * Du[ok], axis=1) / nu))
    return lips, mono


# ---------------------------------------------------------------------------
# convergence-bound reports


@dataclass(frozen=True)
class BoundRow:
    t: int
    value: float
    bound: float
    passed: bool

    def to_dict(self) -> dict:
        return {"t": self.t, "value": self.value, "bound": self.bound, "pass": self.passed}


@dataclass
class BoundReport:
    """A realized sequence compared against a closed-form envelope."""

    name: str
    constants: dict = field(default_factory=dict)
    rows: list[BoundRow] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def satisfied(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def first_violation(self) -> int | None:
        for r in self.rows:
            if not r.passed:
                return r.t
        return None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "constants": {k: float(v) for k, v in self.constants.items()},
            "satisfied": self.satisfied,
            "notes": list(self.notes),
            "rows": [r.to_dict() for r in self.rows],
        }


_BOUND_SLACK = 1e-12


def descent_bound_reports(
    trace: TrainTrace, link: LinkSpec, wstar_norm: float, loss_opt: float
) -> list[BoundReport]:
    """Loss-gap envelopes for the preconditioned solver started at zero.

    Always emits the distribution-free sublinear form
    gap_t <= 2 L |W*|_F^2 / (t + 4); when the link has a positive lower
    curvature bound it also emits the geometric form
    gap_t <= (L/2) ((kappa-1)/(kappa+1))^t |W*|_F^2 with kappa = L/mu.
    ``wstar_norm`` is the Frobenius norm of the comparison weights and
    ``loss_opt`` their loss.  Traces not started at zero are refused: the
    envelopes say nothing about them.
    """
    if not trace.initial_weights_zero:
        raise ValueError("bound reports require a trace started at zero weights")
    L = link.lipschitz
    w2 = wstar_norm**2
    losses = trace.losses()
    reports = []

    sub = BoundReport(
        name="sublinear-loss-gap",
        constants={"lipschitz": L, "wstar_norm": wstar_norm, "loss_opt": loss_opt},
    )
    for t in range(1, len(losses)):
        gap = float(losses[t] - loss_opt)
        bound = 2.0 * L * w2 / (t + 4.0)
        sub.rows.append(BoundRow(t, gap, bound, gap <= bound + _BOUND_SLACK))
    reports.append(sub)

    mu = link.strong_monotonicity
    if mu > 0:
        kappa = L / mu
        q = (kappa - 1.0) / (kappa + 1.0)
        lin = BoundReport(
            name="geometric-loss-gap",
            constants={
                "lipschitz": L,
                "curvature_ratio": kappa,
                "wstar_norm": wstar_norm,
                "loss_opt": loss_opt,
            },
        )
        for t in range(1, len(losses)):
            gap = float(losses[t] - loss_opt)
            bound = 0.5 * L * (q**t) * w2
            lin.rows.append(BoundRow(t, gap, bound, gap <= bound + _BOUND_SLACK))
        reports.append(lin)
    return reports


def calibration_bound_report(trace: TrainTrace, kappa: float) -> BoundReport:
    """Mean-squared-residual envelope 22 kappa^2 / t for the calibrated solver.

    The monotonicity of the residual sequence is a hard property and any
    increase is flagged in ``notes``; the envelope itself depends on the
    empirical curvature ratio ``kappa``, so envelope misses are soft
    evidence, not proof of a bug.  A nonpositive or non-finite kappa is
    treated as an estimation artifact: rows pass vacuously and a note says so.
    """
    mses = trace.mses()
    report = BoundReport(name="calibration-mse", constants={"kappa": kappa, "coefficient": 22.0})

    increases = np.flatnonzero(np.diff(mses) > _BOUND_SLACK)
    if increases.size:
        report.notes.append(
            f"mean squared residual increased at t={int(increases[0] + 1)}"
        )

    vacuous = not np.isfinite(kappa) or kappa <= 0
    if vacuous:
        report.notes.append(
            "curvature ratio estimate is nonpositive or non-finite; envelope is vacuous"
        )
    for t in range(1, len(mses)):
        bound = np.inf if vacuous else 22.0 * kappa**2 / t
        value = float(mses[t])
        report.rows.append(BoundRow(t, value, float(bound), bool(value <= bound + _BOUND_SLACK)))
    return report


def residuals_monotone(trace: TrainTrace, tol: float = 1e-12) -> bool:
    """True when the recorded mean squared residuals never increase."""
    return bool(np.all(np.diff(trace.mses()) <= tol))
