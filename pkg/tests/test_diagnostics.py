import numpy as np
import pytest

from glmls.diagnostics import (
    calibration_bound_report,
    check_dual_inequalities,
    check_majorization,
    classification_error,
    confusion_counts,
    descent_bound_reports,
    estimate_link_condition,
    mahalanobis_norm,
    residuals_monotone,
    sample_simplex_interior,
)
from glmls.glm import identity_link, loss, make_link, softmax
from glmls.linalg import accumulate_second_moment
from glmls.solvers import (
    IterationRecord,
    TrainTrace,
    calibrated_least_squares,
    generalized_least_squares,
)


class TestErrorCounting:
    def test_classification_error(self):
        scores = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]])
        assert classification_error(scores, np.array([0, 1, 1])) == pytest.approx(
            1 / 3
        )

    def test_one_hot_labels_accepted(self):
        scores = np.array([[0.9, 0.1], [0.2, 0.8]])
        Y = np.eye(2)
        assert classification_error(scores, Y) == 0.0

    def test_confusion_counts(self):
        scores = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        C = confusion_counts(scores, np.array([0, 1, 1]))
        np.testing.assert_array_equal(C, [[1, 0], [1, 1]])


class TestMahalanobis:
    def test_matches_direct_sum(self, rng):
        X = rng.normal(size=(40, 5))
        M = accumulate_second_moment(X).matrix
        W = rng.normal(size=(3, 5))
        direct = sum(float(W[i] @ M @ W[i]) for i in range(3))
        assert mahalanobis_norm(W, M) == pytest.approx(direct, rel=1e-12)

    def test_rejects_asymmetric(self, rng):
        M = rng.normal(size=(4, 4))
        with pytest.raises(ValueError, match="symmetric"):
            mahalanobis_norm(rng.normal(size=(2, 4)), M)


class TestMajorization:
    def test_softmax_default_constant_holds(self, multinomial_ds, rng):
        X, Y = multinomial_ds.X, multinomial_ds.Y
        link = make_link("softmax")
        k, d = multinomial_ds.n_classes, multinomial_ds.n_features
        for _ in range(50):
            W1 = rng.normal(scale=0.8, size=(k, d))
            W2 = W1 + rng.normal(scale=0.5, size=(k, d))
            check = check_majorization(link, X, Y, W1, W2)
            assert check.passed, check.margin

    def test_softmax_tight_half_constant_holds(self, multinomial_ds, rng):
        X, Y = multinomial_ds.X, multinomial_ds.Y
        link = make_link("softmax")
        k, d = multinomial_ds.n_classes, multinomial_ds.n_features
        for _ in range(50):
            W1 = rng.normal(scale=0.8, size=(k, d))
            W2 = W1 + rng.normal(scale=0.5, size=(k, d))
            check = check_majorization(link, X, Y, W1, W2, lipschitz=0.5)
            assert check.passed, check.margin

    def test_identity_is_exactly_quadratic(self, rng):
        X = rng.normal(size=(30, 4))
        Y = np.eye(2)[rng.integers(0, 2, size=30)]
        W1 = rng.normal(size=(2, 4))
        W2 = rng.normal(size=(2, 4))
        check = check_majorization(identity_link(), X, Y, W1, W2)
        # quadratic loss meets its own majorizer with equality
        assert check.passed
        assert check.margin == pytest.approx(0.0, abs=1e-9)

    def test_understated_constant_fails(self, rng):
        X = rng.normal(size=(30, 4))
        Y = np.eye(2)[rng.integers(0, 2, size=30)]
        W1 = rng.normal(size=(2, 4))
        W2 = W1 + rng.normal(size=(2, 4))
        check = check_majorization(
            identity_link(), X, Y, W1, W2, lipschitz=0.9
        )
        assert not check.passed


class TestDualInequalities:
    def test_softmax_interior_rows_pass(self):
        P = sample_simplex_interior(4, 300, seed=0)
        Q = sample_simplex_interior(4, 300, seed=1)
        report = check_dual_inequalities(make_link("softmax"), P, Q)
        assert report.passed
        assert report.n_checked == 300
        assert report.upper_checked == 0  # no lower curvature constant

    def test_identity_checks_both_sides(self, rng):
        P = rng.normal(size=(100, 3))
        Q = rng.normal(size=(100, 3))
        report = check_dual_inequalities(identity_link(), P, Q)
        assert report.passed
        assert report.upper_checked == 100

    def test_boundary_rows_skipped(self):
        P = np.array([[1.0, 0.0, 0.0], [0.5, 0.3, 0.2]])
        Q = np.array([[0.4, 0.3, 0.3], [0.4, 0.3, 0.3]])
        report = check_dual_inequalities(make_link("softmax"), P, Q)
        assert report.n_skipped == 1
        assert report.n_checked == 1


class TestConditionEstimate:
    def test_identity_recovers_one(self, rng):
        U = rng.normal(size=(200, 3))
        L, mu = estimate_link_condition(identity_link(), U, seed=0)
        assert L == pytest.approx(1.0, rel=1e-9)
        assert mu == pytest.approx(1.0, rel=1e-9)

    def test_softmax_bounded_by_half(self, rng):
        U = rng.normal(scale=0.5, size=(500, 4))
        L, mu = estimate_link_condition(make_link("softmax"), U, seed=0)
        assert 0 < mu <= L <= 0.5 + 1e-9


class TestSimplexSampler:
    def test_interior_margin(self):
        P = sample_simplex_interior(5, 200, seed=3, min_entry=1e-3)
        assert P.min() >= 1e-3
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)

    def test_seeded(self):
        a = sample_simplex_interior(3, 10, seed=5)
        b = sample_simplex_interior(3, 10, seed=5)
        np.testing.assert_array_equal(a, b)


class TestDescentBounds:
    def test_softmax_sublinear_bound(self, multinomial_ds):
        X, Y = multinomial_ds.X, multinomial_ds.Y
        link = make_link("softmax")
        ref, _ = generalized_least_squares(X, Y, link, n_iter=4000)
        loss_opt = loss(link, ref.W, X, Y)
        wnorm = float(np.linalg.norm(ref.W))
        _, trace = generalized_least_squares(X, Y, link, n_iter=100)
        reports = descent_bound_reports(trace, link, wnorm, loss_opt)
        assert [r.name for r in reports] == ["sublinear-loss-gap"]
        assert reports[0].satisfied
        assert len(reports[0].rows) == 100
        d = reports[0].to_dict()
        assert d["rows"][0].keys() == {"t", "value", "bound", "pass"}

    def test_identity_geometric_bound(self, rng):
        X = rng.normal(size=(300, 6))
        W_true = rng.normal(size=(3, 6)) * 0.3
        Y = X @ W_true.T
        link = identity_link()
        ref, _ = generalized_least_squares(X, Y, link, n_iter=1)
        loss_opt = loss(link, ref.W, X, Y)
        _, trace = generalized_least_squares(X, Y, link, n_iter=20)
        reports = descent_bound_reports(
            trace, link, float(np.linalg.norm(ref.W)), loss_opt
        )
        names = [r.name for r in reports]
        assert names == ["sublinear-loss-gap", "geometric-loss-gap"]
        assert all(r.satisfied for r in reports)

    def test_corrupted_trace_is_flagged(self, multinomial_ds):
        X, Y = multinomial_ds.X, multinomial_ds.Y
        link = make_link("softmax")
        ref, _ = generalized_least_squares(X, Y, link, n_iter=4000)
        loss_opt = loss(link, ref.W, X, Y)
        wnorm = float(np.linalg.norm(ref.W))
        _, trace = generalized_least_squares(X, Y, link, n_iter=50)
        # fabricate a loss above the certified envelope at t = 10
        bad = [
            IterationRecord(r.t, r.loss, r.mse, r.seconds) for r in trace.records
        ]
        bound_10 = 2 * link.lipschitz * wnorm**2 / (10 + 4)
        bad[10] = IterationRecord(
            10, loss_opt + bound_10 * 1.5, bad[10].mse, bad[10].seconds
        )
        doctored = TrainTrace(records=bad)
        reports = descent_bound_reports(doctored, link, wnorm, loss_opt)
        assert not reports[0].satisfied
        assert reports[0].first_violation == 10

    def test_warm_start_refused(self, multinomial_ds):
        X, Y = multinomial_ds.X, multinomial_ds.Y
        link = make_link("softmax")
        w0 = np.ones((multinomial_ds.n_classes, multinomial_ds.n_features))
        _, trace = generalized_least_squares(X, Y, link, n_iter=3, w0=w0)
        with pytest.raises(ValueError, match="zero"):
            descent_bound_reports(trace, link, 1.0, 0.0)


class TestCalibrationBound:
    def test_noiseless_run_satisfies_envelope(self, noiseless_ds):
        X, Y = noiseless_ds.X, noiseless_ds.Y
        _, trace = calibrated_least_squares(X, Y, n_iter=40)
        U = X @ noiseless_ds.w_star.T
        L, mu = estimate_link_condition(make_link("softmax"), U, seed=0)
        report = calibration_bound_report(trace, kappa=L / mu)
        assert report.satisfied
        assert report.constants["kappa"] == pytest.approx(L / mu)

    def test_corrupted_mse_flagged(self, noiseless_ds):
        X, Y = noiseless_ds.X, noiseless_ds.Y
        _, trace = calibrated_least_squares(X, Y, n_iter=20)
        U = X @ noiseless_ds.w_star.T
        L, mu = estimate_link_condition(make_link("softmax"), U, seed=0)
        kappa = L / mu
        records = [
            IterationRecord(r.t, r.loss, r.mse, r.seconds) for r in trace.records
        ]
        t_bad = 15
        records[t_bad] = IterationRecord(
            t_bad,
            records[t_bad].loss,
            22.0 * kappa**2 / t_bad * 2.0,
            records[t_bad].seconds,
        )
        doctored = TrainTrace(records=records)
        report = calibration_bound_report(doctored, kappa=kappa)
        assert not report.satisfied
        assert report.first_violation == t_bad

    def test_nonfinite_kappa_is_vacuous_with_note(self, noiseless_ds):
        _, trace = calibrated_least_squares(
            noiseless_ds.X, noiseless_ds.Y, n_iter=5
        )
        report = calibration_bound_report(trace, kappa=float("inf"))
        assert report.satisfied
        assert any("vacuous" in n for n in report.notes)


class TestResidualMonotonicity:
    def test_real_run_is_monotone(self, noiseless_ds):
        _, trace = calibrated_least_squares(
            noiseless_ds.X, noiseless_ds.Y, n_iter=15
        )
        assert residuals_monotone(trace)

    def test_increase_detected(self):
        records = [
            IterationRecord(0, 1.0, 1.0, 0.0),
            IterationRecord(1, 0.5, 0.5, 0.0),
            IterationRecord(2, 0.4, 0.6, 0.0),
        ]
        assert not residuals_monotone(TrainTrace(records=records))
