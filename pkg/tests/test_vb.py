import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import grid_argmax_b
from robust_rts.models import LinearSensors, coordinated_turn_model
from robust_rts.simulate import MeasurementSet, build_sensor_grid, simulate_measurements, simulate_trajectory
from robust_rts.unscented import GaussianBelief
from robust_rts.vb import (
    VbHyperparams,
    expected_sq_residual,
    expected_sq_residuals,
    indicator_expectation,
    indicator_step,
    omega,
    run_asor,
    run_ideal,
    run_method,
    run_plain,
    run_ror,
    run_sor,
    update_b,
)
from conftest import make_linear_problem

HP = VbHyperparams()


class TestHyperparams:
    @pytest.mark.parametrize("kw", [dict(a=0), dict(A=1.0), dict(B=0), dict(theta=1.0), dict(epsilon=0),
                                    dict(max_iters=0), dict(tol=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            VbHyperparams(**kw)

    def test_alpha(self):
        assert VbHyperparams(a=2.0).alpha == 2.5


class TestExpectedResidual:
    def test_zero(self):
        s = LinearSensors([[1.0, 0.0]], [2.0])
        W = expected_sq_residual(GaussianBelief([3.0, 1.0], np.eye(2) * 1e-30), [3.0], s)
        assert W[0] == pytest.approx(0.0, abs=1e-20)

    def test_unit(self):
        s = LinearSensors([[1.0, 0.0]], [4.0])
        W = expected_sq_residual(GaussianBelief([0.0, 0.0], np.eye(2) * 1e-30), [2.0], s)
        assert W[0] == pytest.approx(1.0)

    def test_sampling_oracle(self):
        rng = np.random.default_rng(3)
        H = rng.standard_normal((1, 2))
        s = LinearSensors(H, [0.5])
        b = GaussianBelief([0.4, -1.0], [[1.0, 0.3], [0.3, 0.5]])
        y = np.array([0.7])
        W = expected_sq_residual(b, y, s)[0]
        X = rng.multivariate_normal(b.mean, b.cov, size=1_000_000)
        samples = (y[0] - X @ H[0]) ** 2 / 0.5
        assert abs(W - samples.mean()) < 3 * samples.std() / 1000

    def test_batched_and_masked(self, rng):
        grid = build_sensor_grid(4)
        means = rng.uniform(50, 300, (3, 5))
        covs = np.stack([np.eye(5)] * 3)
        Y = grid.measure(means) + 0.01
        mask = np.ones((3, 4), bool)
        mask[1, 2] = False
        W = expected_sq_residuals(means, covs, Y, grid, mask=mask)
        assert W[1, 2] == 0
        np.testing.assert_allclose(W[0], expected_sq_residual(GaussianBelief(means[0], covs[0]), Y[0], grid))


class TestOmega:
    def test_example(self):
        assert omega(0.0, 1.0, HP) == pytest.approx(1 / (1 + math.sqrt(math.pi) / 2), abs=1e-12)
        assert omega(0.0, 1.0, HP) == pytest.approx(0.5302, abs=1e-4)

    def test_huge_residual(self):
        assert omega(1e6, 1.0, HP) == 0.0
        assert np.isfinite(omega(1e300, 1.0, HP))

    def test_theta_to_one(self):
        hp = VbHyperparams(theta=1 - 1e-15)
        assert omega(50.0, 1.0, hp) > 0.99

    def test_strictly_decreasing_past_turning_point(self):
        # d(log-odds)/dW = 0.5 - alpha / (2 beta): Omega falls once W > 2 (alpha - b_hat)
        W = np.linspace(1.0, 80, 2001)
        assert np.all(np.diff(omega(W, 1.0, HP)) < 0)
        assert np.all(np.diff(omega(np.linspace(0, 80, 2001), 2.0, HP)) < 0)

    def test_rises_below_turning_point(self):
        W = np.linspace(0.0, 0.99, 100)
        assert np.all(np.diff(omega(W, 1.0, HP)) > 0)

    def test_indicator_examples(self):
        assert indicator_expectation(1.0, 3.0, HP) == 1.0
        assert indicator_expectation(0.0, 3.0, HP) == pytest.approx(0.5)
        assert indicator_expectation(0.5302, 1.0, HP) == 1.0
        raw = indicator_expectation(0.5302, 1.0, VbHyperparams(clamp=False))
        assert raw == pytest.approx(0.5302 + 0.4698 * 1.5)

    @settings(max_examples=200, deadline=None)
    @given(W=st.floats(0, 1e12), b=st.floats(1e-3, 1e3))
    def test_weights_bounded(self, W, b):
        om = omega(W, b, HP)
        val = indicator_expectation(om, 0.5 * W + b, HP)
        assert HP.epsilon <= val <= 1.0

    def test_redescending_above_floor(self):
        w_floor = 2 * HP.alpha / HP.epsilon  # alpha / beta reaches epsilon here
        W = np.logspace(2, np.log10(w_floor) - 0.01, 400)
        infl = indicator_expectation(omega(W, 1.0, HP), 0.5 * W + 1.0, HP) * np.sqrt(W)
        assert np.all(np.diff(infl) < 0)

    def test_floor_region(self):
        W = np.logspace(7, 12, 20)
        val = indicator_expectation(omega(W, 1.0, HP), 0.5 * W + 1.0, HP)
        np.testing.assert_array_equal(val, HP.epsilon)


class TestUpdateB:
    def test_no_outliers(self):
        assert update_b(np.ones(5), np.ones(5), HP) == pytest.approx((HP.A - 1) / HP.B)

    def test_example(self):
        b = update_b(np.array([0.0, 0.0]), np.array([1.0, 2.0]), HP)
        assert b == pytest.approx(3 / 3.25)

    def test_batched(self):
        om = np.array([[0.0, 0.0], [1.0, 1.0]])
        beta = np.array([[1.0, 2.0], [1.0, 1.0]])
        np.testing.assert_allclose(update_b(om, beta, HP), [3 / 3.25, 1.0])

    def test_grid_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            hp = VbHyperparams(a=rng.uniform(0.2, 3), A=rng.uniform(1.1, 5), B=rng.uniform(0.2, 5))
            m = int(rng.integers(1, 30))
            om = rng.uniform(0, 1, m)
            beta = rng.uniform(0.1, 50, m)
            b = update_b(om, beta, hp)
            best, cell = grid_argmax_b(om, beta, hp.a, hp.A, hp.B, 10 * b)
            assert abs(best - b) <= cell


class TestIndicatorStep:
    def test_masked_entries_neutral(self):
        W = np.array([[1.0, 1e4]])
        mask = np.array([[True, False]])
        for mode in ("asor", "sor", "ror"):
            s = indicator_step(mode, W, np.ones(1), mask, HP)
            assert s.expect_I[0, 1] == 1.0

    def test_sor_weights(self):
        s = indicator_step("sor", np.array([[0.0, 1e4]]), np.ones(1), np.ones((1, 2), bool), HP)
        assert s.expect_I[0, 1] == pytest.approx(HP.epsilon)
        assert s.expect_I[0, 0] == pytest.approx(0.5302, abs=1e-4)

    def test_ror_scalar(self):
        s = indicator_step("ror", np.array([[1.0, 2.0, 3.0]]), np.ones(1), np.ones((1, 3), bool), HP)
        assert np.ptp(s.expect_I) == 0

    def test_ror_equals_sor_for_one_sensor(self):
        W = np.array([[0.3], [7.0], [40.0]])
        a = indicator_step("ror", W, np.ones(3), np.ones((3, 1), bool), HP)
        b = indicator_step("sor", W, np.ones(3), np.ones((3, 1), bool), HP)
        np.testing.assert_allclose(a.expect_I, b.expect_I)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            indicator_step("huber", np.zeros((1, 1)), np.ones(1), np.ones((1, 1), bool), HP)


def _ct_scenario(lam, seed, T=40, m=10):
    model = coordinated_turn_model()
    m0 = np.array([0, 10, 0, -5, np.pi / 180])
    P0 = 10 * model.process_noise
    states = simulate_trajectory(model, m0, P0, T, seed=seed)
    data, gt = simulate_measurements(states[1:], build_sensor_grid(m), lam, math.sqrt(1000), seed=seed + 1)
    return model, data, gt, states, GaussianBelief(m0, P0)


def _rmse(xs, states):
    return float(np.sqrt(np.mean(np.sum((xs[:, [0, 2]] - states[1:, [0, 2]]) ** 2, axis=1))))


class TestSmoothers:
    def test_linear_no_outliers_matches_plain(self, rng):
        model, sensors, data, *_ = make_linear_problem(rng, T=50, m=4)
        x0 = GaussianBelief(np.zeros(2), np.eye(2))
        plain = run_plain(model, data, x0).smooth_mean
        res = run_asor(model, data, x0, VbHyperparams(theta=0.999999))
        assert np.sqrt(np.mean((res.smooth_mean - plain) ** 2)) < 1e-3
        assert res.weights.min() > 0.9

    def test_no_outlier_fixed_point(self):
        model, data, gt, states, x0 = _ct_scenario(0.0, 5)
        res = run_asor(model, data, x0)
        assert res.converged
        b = res.history[-1].b_hat
        assert np.all(b > 0)
        assert np.median(np.abs(b - (HP.A - 1) / HP.B)) < 0.5

    def test_vb_fixed_point(self):
        model, data, gt, states, x0 = _ct_scenario(0.3, 9)
        hp = VbHyperparams(tol=1e-6, max_iters=200)
        res = run_asor(model, data, x0, hp)
        assert res.converged
        last = res.history[-1]
        W = expected_sq_residuals(res.smooth_mean, res.trace.smooth_cov, data.values, data.sensors, mask=data.mask)
        again = indicator_step("asor", W, last.b_hat, data.mask, hp)
        assert np.max(np.abs(again.expect_I - last.expect_I)) < 10 * 1e-3
        assert np.max(np.abs(again.b_hat - last.b_hat) / last.b_hat) < 1e-3

    def test_weights_in_range_every_iteration(self):
        model, data, gt, states, x0 = _ct_scenario(0.4, 21)
        res = run_asor(model, data, x0)
        for st_ in res.history:
            assert st_.expect_I.min() >= HP.epsilon and st_.expect_I.max() <= 1.0

    def test_outliers_downweighted(self):
        model, data, gt, states, x0 = _ct_scenario(0.3, 2, T=60, m=20)
        res = run_asor(model, data, x0)
        w = res.weights
        assert np.median(w[gt.mask]) < 0.05 < np.median(w[~gt.mask])

    def test_robust_beats_plain(self):
        model, data, gt, states, x0 = _ct_scenario(0.3, 4, T=60, m=20)
        plain = _rmse(run_plain(model, data, x0).smooth_mean, states)
        for runner in (run_asor, run_sor):
            assert _rmse(runner(model, data, x0).smooth_mean, states) < 0.5 * plain

    def test_ideal_with_empty_mask_is_plain(self):
        model, data, gt, states, x0 = _ct_scenario(0.0, 3)
        a = run_ideal(model, data, np.zeros_like(data.mask), x0).smooth_mean
        np.testing.assert_array_equal(a, run_plain(model, data, x0).smooth_mean)

    def test_ror_equals_sor_single_sensor(self, rng):
        model, sensors, data, *_ = make_linear_problem(rng, T=30, m=1)
        values = data.values.copy()
        values[10] += 40
        data = MeasurementSet(values, data.mask, sensors)
        x0 = GaussianBelief(np.zeros(2), np.eye(2))
        np.testing.assert_allclose(run_ror(model, data, x0).smooth_mean, run_sor(model, data, x0).smooth_mean)

    def test_selective_beats_scalar_with_one_bad_sensor(self):
        model, data, gt, states, x0 = _ct_scenario(0.0, 8, T=60, m=50)
        values = data.values.copy()
        rng = np.random.default_rng(0)
        bad = 50 - 1  # a range sensor
        values[:, bad] += rng.standard_normal(60) * math.sqrt(10 * 1000)
        data = MeasurementSet(values, data.mask, data.sensors)
        assert _rmse(run_asor(model, data, x0).smooth_mean, states) < _rmse(run_ror(model, data, x0).smooth_mean, states)

    def test_diagnostic_log(self, tmp_path):
        model, data, gt, states, x0 = _ct_scenario(0.2, 6, T=20)
        buf = io.StringIO()
        res = run_asor(model, data, x0, log_file=buf)
        lines = buf.getvalue().splitlines()
        assert len(lines) == res.iterations
        assert lines[0].startswith("iter=1 delta=inf mean_b=")
        path = tmp_path / "vb.log"
        run_sor(model, data, x0, log_file=path)
        assert "frac_omega_lt_half=" in path.read_text()

    def test_imq_variant(self):
        model, data, gt, states, x0 = _ct_scenario(0.3, 12)
        res = run_method("asor-imq", model, data, x0)
        assert res.method == "asor-imq"
        assert _rmse(res.smooth_mean, states) < 5

    def test_run_method_errors(self):
        model, data, gt, states, x0 = _ct_scenario(0.0, 1, T=5)
        with pytest.raises(ValueError):
            run_method("ideal", model, data, x0)
        with pytest.raises(ValueError):
            run_method("nope", model, data, x0)
