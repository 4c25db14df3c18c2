"""Variational-Bayes outlier-rejecting unscented RTS smoothers.

Every smoother here alternates a weighted forward/backward pass with an
update of per-sensor indicator expectations ``<I>`` that scale the inverse
measurement variances. The variants differ only in the indicator step:

``asor``
    Gamma-distributed outlier weights with a learned per-step rate ``b_hat``.
``sor``
    Same indicator posterior with ``b_hat`` frozen at ``b0`` and outliers
    mapped to ``epsilon`` (reconstruction of the selective rejecter).
``ror``
    One scalar indicator per step driven by the summed normalised residual,
    so the whole measurement vector is kept or rejected together.

``run_ideal`` and ``run_plain`` are single-pass references.
"""

from __future__ import annotations

import contextlib
import logging
import os
from dataclasses import dataclass, field, replace
from typing import IO

import numpy as np
from scipy.special import expit, gammaln

from .linalg import nearest_pd
from .models import wrap_angle
from .smoother import SmootherTrace, backward_pass
from .unscented import GaussianBelief, SmootherDivergence, forward_pass, ut_weights

logger = logging.getLogger(__name__)

METHODS = ("asor", "asor-imq", "sor", "ror", "ideal", "plain")


@dataclass(frozen=True)
class VbHyperparams:
    """Priors and loop controls shared by the VB smoothers.

    ``b0`` is the initial Gamma rate (and the frozen rate of ``sor``/``ror``).
    ``clamp`` caps ``<I>`` at 1; disable it only for ablations.
    """

    a: float = 1.0
    A: float = 2.0
    B: float = 1.0
    theta: float = 0.5
    epsilon: float = 1e-6
    max_iters: int = 50
    tol: float = 1e-4
    imq_c: float = 5.0
    b0: float = 1.0
    clamp: bool = True

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("a must be positive")
        if self.A <= 1:
            raise ValueError("A must exceed 1 so the rate update stays positive")
        if self.B <= 0 or self.b0 <= 0:
            raise ValueError("B and b0 must be positive")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.max_iters < 1 or self.tol <= 0 or self.imq_c <= 0:
            raise ValueError("max_iters, tol and imq_c must be positive")

    @property
    def alpha(self) -> float:
        return self.a + 0.5


@dataclass
class IndicatorState:
    W: np.ndarray
    beta: np.ndarray
    omega: np.ndarray
    expect_I: np.ndarray
    b_hat: np.ndarray


@dataclass
class SmootherResult:
    method: str
    trace: SmootherTrace
    history: list[IndicatorState] = field(default_factory=list)
    iterations: int = 1
    converged: bool = True

    @property
    def smooth_mean(self) -> np.ndarray:
        return self.trace.smooth_mean

    @property
    def weights(self) -> np.ndarray | None:
        return self.history[-1].expect_I if self.history else None


def expected_sq_residuals(means, covs, Y, sensors, kappa: float = 0.0, mask=None) -> np.ndarray:
    """Expected normalised squared residuals ``<(y - h(x))^2> / R`` for every step.

    ``means`` is ``(T, n)`` and ``covs`` ``(T, n, n)``. The expectation uses
    the sigma points of each Gaussian: squared residual of the sigma-weighted
    predicted measurement plus its sigma-weighted spread. Masked entries are 0.
    """
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    Y = np.asarray(Y, dtype=float)
    T, n = means.shape
    if T == 0:
        return np.zeros_like(Y)
    w = ut_weights(n, kappa)
    try:
        L = np.linalg.cholesky(covs)
    except np.linalg.LinAlgError:
        L = np.linalg.cholesky(np.stack([nearest_pd(P) for P in covs]))
    offsets = np.sqrt(n + kappa) * np.swapaxes(L, 1, 2)  # rows are factor columns
    pts = np.concatenate([means[:, None, :], means[:, None, :] + offsets, means[:, None, :] - offsets], axis=1)
    ysig = sensors.measure(pts)  # (T, 2n+1, m)
    ang = sensors.angular
    if np.any(ang):
        ref = ysig[:, :1, :]
        dev0 = np.where(ang, wrap_angle(ysig - ref), ysig - ref)
        v = ref[:, 0, :] + np.einsum("i,tim->tm", w, dev0)
        v = np.where(ang, wrap_angle(v), v)
        dev = ysig - v[:, None, :]
        dev = np.where(ang, wrap_angle(dev), dev)
        res = Y - v
        res = np.where(ang, wrap_angle(res), res)
    else:
        v = np.einsum("i,tim->tm", w, ysig)
        dev = ysig - v[:, None, :]
        res = Y - v
    spread = np.einsum("i,tim->tm", w, dev * dev)
    W = (res * res + spread) / sensors.noise_variance
    if mask is not None:
        W = np.where(mask, W, 0.0)
    return W


def expected_sq_residual(smoothed: GaussianBelief, y, sensors, kappa: float = 0.0) -> np.ndarray:
    """Single-step form of :func:`expected_sq_residuals`."""
    return expected_sq_residuals(smoothed.mean[None], smoothed.cov[None], np.asarray(y, dtype=float)[None], sensors, kappa)[0]


def _log_zeta(hp: VbHyperparams, alpha) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(1.0 / hp.theta - 1.0) + gammaln(alpha) - gammaln(hp.a)


def omega(W, b_hat, hp: VbHyperparams, dim=1):
    """Posterior probability that a reading is clean.

    Evaluated in log space so that huge residuals give 0 instead of
    overflowing. ``dim`` is the number of readings sharing the indicator
    (1 for per-sensor indicators); the Gamma shape becomes ``a + dim/2``.
    """
    W = np.asarray(W, dtype=float)
    b_hat = np.asarray(b_hat, dtype=float)
    alpha = hp.a + 0.5 * np.asarray(dim, dtype=float)
    beta = 0.5 * W + b_hat
    z = _log_zeta(hp, alpha) + hp.a * np.log(b_hat) - alpha * np.log(beta) + 0.5 * W
    return expit(-z)


def indicator_expectation(omega_, beta, hp: VbHyperparams, dim=1):
    """``<I> = Omega + (1 - Omega) alpha / beta``, floored at epsilon (and capped at 1 if ``hp.clamp``)."""
    alpha = hp.a + 0.5 * np.asarray(dim, dtype=float)
    val = omega_ + (1.0 - omega_) * alpha / beta
    upper = 1.0 if hp.clamp else np.inf
    return np.clip(val, hp.epsilon, upper)


def update_b(omega_row, beta_row, hp: VbHyperparams, mask=None):
    """Closed-form maximiser ``(A_bar - 1) / B_bar`` of the per-step rate objective.

    Works on a single step (vectors) or on ``(T, m)`` arrays, summing over
    the last axis. Masked readings do not contribute.
    """
    one_minus = 1.0 - np.asarray(omega_row, dtype=float)
    if mask is not None:
        one_minus = np.where(mask, one_minus, 0.0)
    A_bar = hp.A + hp.a * one_minus.sum(axis=-1)
    B_bar = hp.B + (one_minus * hp.alpha / np.asarray(beta_row, dtype=float)).sum(axis=-1)
    if np.any(A_bar <= 1):
        raise ValueError("A_bar must exceed 1")
    return (A_bar - 1.0) / B_bar


def indicator_step(mode: str, W, b_hat, mask, hp: VbHyperparams) -> IndicatorState:
    """One indicator/rate update from expected residuals ``W`` (shape ``(T, m)``)."""
    W = np.asarray(W, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    T = W.shape[0]
    if mode == "asor":
        b = np.asarray(b_hat, dtype=float)
        beta = 0.5 * W + b[:, None]
        om = np.where(mask, omega(W, b[:, None], hp), 1.0)
        b_new = update_b(om, beta, hp, mask)
        expect = np.where(mask, indicator_expectation(om, beta, hp), 1.0)
        return IndicatorState(W, beta, om, expect, b_new)
    if mode == "sor":
        b = np.full(T, hp.b0)
        beta = 0.5 * W + hp.b0
        om = np.where(mask, omega(W, hp.b0, hp), 1.0)
        expect = np.where(mask, om + (1.0 - om) * hp.epsilon, 1.0)
        return IndicatorState(W, beta, om, expect, b)
    if mode == "ror":
        b = np.full(T, hp.b0)
        count = mask.sum(axis=1)
        W_sum = np.where(mask, W, 0.0).sum(axis=1)
        om = np.where(count > 0, omega(W_sum, hp.b0, hp, dim=np.maximum(count, 1)), 1.0)
        scalar = om + (1.0 - om) * hp.epsilon
        beta = np.broadcast_to((0.5 * W_sum + hp.b0)[:, None], W.shape).copy()
        om_full = np.broadcast_to(om[:, None], W.shape).copy()
        expect = np.where(mask, scalar[:, None], 1.0)
        return IndicatorState(W, beta, om_full, expect, b)
    raise ValueError(f"unknown indicator mode {mode!r}")


@contextlib.contextmanager
def _diagnostic_sink(log_file):
    if log_file is None:
        yield None
    elif isinstance(log_file, (str, os.PathLike)):
        with open(log_file, "a", encoding="utf-8") as fh:
            yield fh
    else:
        yield log_file


def _vb_loop(mode, model, data, x0, hp, kappa, imq=False, log_file: str | os.PathLike | IO | None = None):
    Y = np.asarray(data.values, dtype=float)
    mask = np.asarray(data.mask, dtype=bool)
    T = Y.shape[0]
    weights = np.ones_like(Y)
    b_hat = np.full(T, hp.b0)
    history: list[IndicatorState] = []
    prev = None
    converged = False
    strace = None
    it = 0
    with _diagnostic_sink(log_file) as sink:
        for it in range(1, hp.max_iters + 1):
            imq_c = hp.imq_c if (imq and it == 1) else None
            ftrace = forward_pass(model, data, weights, x0, kappa, imq_c=imq_c)
            strace = backward_pass(ftrace)
            W = expected_sq_residuals(strace.smooth_mean, strace.smooth_cov, Y, data.sensors, kappa, mask)
            if not np.all(np.isfinite(W)):
                bad = int(np.flatnonzero(~np.all(np.isfinite(W), axis=1))[0])
                raise SmootherDivergence("non-finite expected residual", step=bad)
            state = indicator_step(mode, W, b_hat, mask, hp)
            history.append(state)
            weights, b_hat = state.expect_I, state.b_hat

            xs = strace.smooth_mean
            if prev is None:
                delta = np.inf
            else:
                delta = float(np.max(np.linalg.norm(xs - prev, axis=1) / (1.0 + np.linalg.norm(xs, axis=1)))) if T else 0.0
            frac = float(np.mean(state.omega[mask] < 0.5)) if mask.any() else 0.0
            line = f"iter={it} delta={delta:.6g} mean_b={float(np.mean(b_hat)) if T else 0.0:.6g} frac_omega_lt_half={frac:.4f}"
            logger.debug("%s %s", mode, line)
            if sink is not None:
                sink.write(line + "\n")
            if delta < hp.tol:
                converged = True
                break
            prev = xs
    return strace, history, it, converged


def run_asor(model, data, x0: GaussianBelief, hp: VbHyperparams = VbHyperparams(), kappa: float = 0.0,
             imq: bool = False, log_file=None) -> SmootherResult:
    """Adaptive selective outlier-rejecting smoother.

    With ``imq=True`` the first forward pass uses inverse multi-quadratic
    step weights (soft threshold ``hp.imq_c``) instead of unit weights.
    """
    strace, history, it, conv = _vb_loop("asor", model, data, x0, hp, kappa, imq, log_file)
    return SmootherResult("asor-imq" if imq else "asor", strace, history, it, conv)


def run_sor(model, data, x0: GaussianBelief, hp: VbHyperparams = VbHyperparams(), kappa: float = 0.0,
            log_file=None) -> SmootherResult:
    strace, history, it, conv = _vb_loop("sor", model, data, x0, hp, kappa, False, log_file)
    return SmootherResult("sor", strace, history, it, conv)


def run_ror(model, data, x0: GaussianBelief, hp: VbHyperparams = VbHyperparams(), kappa: float = 0.0,
            log_file=None) -> SmootherResult:
    strace, history, it, conv = _vb_loop("ror", model, data, x0, hp, kappa, False, log_file)
    return SmootherResult("ror", strace, history, it, conv)


def run_plain(model, data, x0: GaussianBelief, kappa: float = 0.0) -> SmootherResult:
    strace = backward_pass(forward_pass(model, data, None, x0, kappa))
    return SmootherResult("plain", strace)


def run_ideal(model, data, outlier_mask, x0: GaussianBelief, kappa: float = 0.0) -> SmootherResult:
    """Plain smoother with the known contaminated readings removed."""
    clean_mask = np.asarray(data.mask, dtype=bool) & ~np.asarray(outlier_mask, dtype=bool)
    strace = backward_pass(forward_pass(model, replace(data, mask=clean_mask), None, x0, kappa))
    return SmootherResult("ideal", strace)


def run_method(method: str, model, data, x0: GaussianBelief, hp: VbHyperparams = VbHyperparams(),
               kappa: float = 0.0, outlier_mask=None, log_file=None) -> SmootherResult:
    if method == "asor":
        return run_asor(model, data, x0, hp, kappa, log_file=log_file)
    if method == "asor-imq":
        return run_asor(model, data, x0, hp, kappa, imq=True, log_file=log_file)
    if method == "sor":
        return run_sor(model, data, x0, hp, kappa, log_file=log_file)
    if method == "ror":
        return run_ror(model, data, x0, hp, kappa, log_file=log_file)
    if method == "plain":
        return run_plain(model, data, x0, kappa)
    if method == "ideal":
        if outlier_mask is None:
            raise ValueError("the ideal smoother needs the ground-truth outlier mask")
        return run_ideal(model, data, outlier_mask, x0, kappa)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
