import numpy as np
import pytest

from oracles import kalman_filter, rts_smoother
from robust_rts.smoother import backward_pass, smoother_gain
from robust_rts.unscented import GaussianBelief, forward_pass
from conftest import make_linear_problem


def test_gain_identity(rng):
    A = rng.standard_normal((3, 3))
    P = A @ A.T + np.eye(3)
    np.testing.assert_allclose(smoother_gain(P, P), np.eye(3), atol=1e-12)


def test_gain_zero():
    assert np.all(smoother_gain(np.zeros((2, 2)), np.eye(2)) == 0)


def test_gain_linear_closed_form(rng):
    A = rng.standard_normal((3, 3))
    P = A @ A.T + np.eye(3)
    F = rng.standard_normal((3, 3))
    Pn = F @ P @ F.T + 0.1 * np.eye(3)
    np.testing.assert_allclose(smoother_gain(P @ F.T, Pn), P @ F.T @ np.linalg.inv(Pn), atol=1e-10)


def test_gain_singular_retries():
    G = smoother_gain(np.eye(2), np.diag([1.0, 0.0]))
    assert np.all(np.isfinite(G))


@pytest.mark.parametrize("m", [1, 3])
def test_matches_rts(rng, m):
    model, sensors, data, F, Q, H, R = make_linear_problem(rng, m=m)
    x0 = GaussianBelief(np.zeros(2), np.eye(2))
    st = backward_pass(forward_pass(model, data, None, x0))
    mp, Pp, mf, Pf = kalman_filter(F, Q, H, R, x0.mean, x0.cov, data.values)
    ms, Ps = rts_smoother(F, mp, Pp, mf, Pf)
    np.testing.assert_allclose(st.smooth_mean, ms, atol=1e-8)
    assert max(np.linalg.norm(a - b) for a, b in zip(st.smooth_cov, Ps)) < 1e-8


def test_last_step_is_filtered(rng):
    model, sensors, data, *_ = make_linear_problem(rng, T=10)
    tr = forward_pass(model, data, None, GaussianBelief(np.zeros(2), np.eye(2)))
    st = backward_pass(tr)
    np.testing.assert_array_equal(st.smooth_mean[-1], tr.filt_mean[-1])
    assert st.smoothed(0).dim == 2 and st.filtered(0).dim == 2


def test_smoothing_shrinks_covariance(rng):
    model, sensors, data, *_ = make_linear_problem(rng, T=20)
    tr = forward_pass(model, data, None, GaussianBelief(np.zeros(2), np.eye(2)))
    st = backward_pass(tr)
    for k in range(19):
        assert np.trace(st.smooth_cov[k]) <= np.trace(tr.filt_cov[k]) + 1e-12
        assert np.linalg.eigvalsh(st.smooth_cov[k]).min() > 0


def test_empty_trace(rng):
    model, sensors, data, *_ = make_linear_problem(rng, T=1)
    tr = forward_pass(model, type(data)(data.values[:0], data.mask[:0], sensors), None,
                      GaussianBelief(np.zeros(2), np.eye(2)))
    assert len(backward_pass(tr)) == 0
