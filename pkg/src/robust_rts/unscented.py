"""Sigma-point machinery and the serial sigma-point Kalman filter (forward pass).

The measurement update processes one sensor at a time in information form,
so the cost of a step grows linearly with the number of sensors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg.lapack import dposv

from .linalg import nearest_pd
from .models import wrap_angle

logger = logging.getLogger(__name__)


class SmootherDivergence(RuntimeError):
    """A filter or smoother state became non-finite."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


@dataclass
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass
class SigmaSet:
    points: np.ndarray  # (2n+1, n)
    weights: np.ndarray  # (2n+1,)
    kappa: float


@dataclass
class PredictionResult:
    predicted: GaussianBelief
    cross_cov: np.ndarray
    sigma: SigmaSet


@dataclass
class FilterTrace:
    """Per-step outputs of the forward pass for steps ``1..T``.

    ``cross_cov[k]`` couples the filtered state at the previous step (the
    prior for ``k = 0``) with ``pred_mean[k]``.
    """

    prior: GaussianBelief
    pred_mean: np.ndarray
    pred_cov: np.ndarray
    cross_cov: np.ndarray
    filt_mean: np.ndarray
    filt_cov: np.ndarray
    repairs: int = 0

    def __len__(self):
        return self.filt_mean.shape[0]


def ut_weights(n: int, kappa: float) -> np.ndarray:
    lam = n + kappa
    if lam <= 0:
        raise ValueError(f"n + kappa must be positive, got {lam}")
    w = np.full(2 * n + 1, 0.5 / lam)
    w[0] = kappa / lam
    return w


def sigma_points(belief: GaussianBelief, kappa: float = 0.0) -> SigmaSet:
    """Symmetric 2n+1 point set from the lower Cholesky factor of ``belief.cov``.

    Raises ``numpy.linalg.LinAlgError`` if the covariance is not positive
    definite; callers can repair it with ``nearest_pd`` first.
    """
    n = belief.dim
    weights = ut_weights(n, kappa)
    L = np.linalg.cholesky(belief.cov)
    offsets = np.sqrt(n + kappa) * L.T
    points = np.empty((2 * n + 1, n))
    points[0] = belief.mean
    points[1 : n + 1] = belief.mean + offsets
    points[n + 1 :] = belief.mean - offsets
    return SigmaSet(points, weights, kappa)


def ut_predict(sigma: SigmaSet, f, Q) -> PredictionResult:
    """Push sigma points through ``f``; return the prediction and cross-covariance."""
    X = sigma.points
    w = sigma.weights
    FX = f(X)
    mean = w @ FX
    dF = FX - mean
    cov = (dF.T * w) @ dF + Q
    dX = X - w @ X
    cross = (dX.T * w) @ dF
    return PredictionResult(GaussianBelief(mean, 0.5 * (cov + cov.T)), cross, SigmaSet(FX, w, sigma.kappa))


def predicted_measurement(ysig: np.ndarray, weights: np.ndarray, angular: np.ndarray) -> np.ndarray:
    """Sigma-weighted measurement mean; angular channels are averaged about the centre point."""
    v = weights @ ysig
    if np.any(angular):
        ref = ysig[0, angular]
        v[angular] = wrap_angle(ref + weights @ wrap_angle(ysig[:, angular] - ref))
    return v


def serial_update(
    pred: GaussianBelief,
    sigma: SigmaSet,
    ysig: np.ndarray,
    y: np.ndarray,
    r_diag: np.ndarray,
    weights: np.ndarray,
    mask: np.ndarray | None = None,
    angular: np.ndarray | None = None,
) -> GaussianBelief:
    """Information-form measurement update, one sensor at a time.

    ``sigma`` must be drawn from ``pred`` and ``ysig`` holds those points
    mapped through the measurement function, shape ``(2n+1, m)``. Each
    unmasked sensor ``l`` adds ``w_l / R_l`` times the outer product of its
    scaled sigma deviations to the ``(2n+1) x (2n+1)`` accumulator, which
    starts at the identity.
    """
    m = ysig.shape[1]
    if mask is None:
        mask = np.ones(m, dtype=bool)
    if angular is None:
        angular = np.zeros(m, dtype=bool)
    active = np.flatnonzero(mask)
    if active.size == 0:
        return GaussianBelief(pred.mean.copy(), pred.cov.copy())
    if np.any(sigma.weights < 0):
        raise ValueError("information-form update needs non-negative sigma weights (kappa >= 0)")

    sw = np.sqrt(sigma.weights)
    v = predicted_measurement(ysig, sigma.weights, angular)
    dev = ysig - v
    resid = y - v
    if np.any(angular):
        dev[:, angular] = wrap_angle(dev[:, angular])
        resid[angular] = wrap_angle(resid[angular])
    rows = np.ascontiguousarray((sw[:, None] * dev).T)  # row l: scaled deviations of sensor l
    gain = weights / r_diag

    N = sw.shape[0]
    c_inv = np.eye(N)
    d = np.zeros(N)
    for l in active:
        g = gain[l]
        c_inv += g * np.outer(rows[l], rows[l])
        d += (g * resid[l]) * rows[l]

    Xdev = (sw[:, None] * (sigma.points - pred.mean)).T  # (n, 2n+1)
    rhs = np.column_stack([d, Xdev.T])
    _, sol, info = dposv(c_inv, rhs, lower=1)
    if info != 0:
        raise np.linalg.LinAlgError(f"information matrix not positive definite (dposv info={info})")
    mean = pred.mean + Xdev @ sol[:, 0]
    cov = Xdev @ sol[:, 1:]
    return GaussianBelief(mean, 0.5 * (cov + cov.T))


def imq_weight(residual, c: float) -> float:
    """Inverse multi-quadratic weight ``(1 + |r|^2 / c^2)^(-1/2)``."""
    if c <= 0:
        raise ValueError("c must be positive")
    r = np.asarray(residual, dtype=float)
    return float((1.0 + np.dot(r, r) / c**2) ** -0.5)


def _sigma_points_repaired(belief: GaussianBelief, kappa: float) -> tuple[SigmaSet, GaussianBelief, bool]:
    """Sigma points of ``belief``, repairing a non-PD covariance first if needed."""
    try:
        return sigma_points(belief, kappa), belief, False
    except np.linalg.LinAlgError:
        belief = GaussianBelief(belief.mean, nearest_pd(belief.cov))
        return sigma_points(belief, kappa), belief, True


def forward_pass(
    model,
    measurements,
    weights: np.ndarray | None,
    x0: GaussianBelief,
    kappa: float = 0.0,
    imq_c: float | None = None,
) -> FilterTrace:
    """Run the serial sigma-point filter over all steps.

    ``measurements`` needs ``values`` and ``mask`` arrays of shape ``(T, m)``
    and a ``sensors`` model. ``weights`` are the per-sensor multipliers on
    the inverse noise variances; with ``imq_c`` set they are replaced by a
    per-step inverse multi-quadratic weight of the whitened innovation.
    """
    Y = np.asarray(measurements.values, dtype=float)
    mask = np.asarray(measurements.mask, dtype=bool)
    sensors = measurements.sensors
    T = Y.shape[0]
    n = model.state_dim
    if weights is None:
        weights = np.ones_like(Y)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != Y.shape:
        raise ValueError(f"weights shape {weights.shape} does not match measurements {Y.shape}")

    trace = FilterTrace(
        prior=x0,
        pred_mean=np.empty((T, n)),
        pred_cov=np.empty((T, n, n)),
        cross_cov=np.empty((T, n, n)),
        filt_mean=np.empty((T, n)),
        filt_cov=np.empty((T, n, n)),
    )
    r_diag = sensors.noise_variance
    angular = sensors.angular
    Q = model.process_noise
    belief = x0
    for k in range(T):
        sig, belief, repaired = _sigma_points_repaired(belief, kappa)
        if repaired:
            trace.repairs += 1
            logger.info("filtered covariance repaired to positive definite at step %d", k)
        pred = ut_predict(sig, model.transition, Q)
        sig, prior_k, repaired = _sigma_points_repaired(pred.predicted, kappa)
        if repaired:
            trace.repairs += 1
            logger.info("predicted covariance repaired to positive definite at step %d", k)
        ysig = sensors.measure(sig.points)
        w_k = weights[k]
        if imq_c is not None:
            v = predicted_measurement(ysig, sig.weights, angular)
            r = Y[k] - v
            r[angular] = wrap_angle(r[angular])
            r = np.where(mask[k], r / np.sqrt(r_diag), 0.0)
            w_k = np.full(Y.shape[1], imq_weight(r, imq_c))
        belief = serial_update(prior_k, sig, ysig, Y[k], r_diag, w_k, mask[k], angular)
        if not (np.all(np.isfinite(belief.mean)) and np.all(np.isfinite(belief.cov))):
            raise SmootherDivergence("non-finite filtered state", step=k)
        trace.pred_mean[k] = prior_k.mean
        trace.pred_cov[k] = prior_k.cov
        trace.cross_cov[k] = pred.cross_cov
        trace.filt_mean[k] = belief.mean
        trace.filt_cov[k] = belief.cov
    return trace
