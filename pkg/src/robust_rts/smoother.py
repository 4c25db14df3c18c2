"""Backward (Rauch-Tung-Striebel) pass over a forward filter trace."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .linalg import default_floor, nearest_pd
from .unscented import FilterTrace, GaussianBelief, SmootherDivergence

logger = logging.getLogger(__name__)


@dataclass
class SmootherTrace:
    filter: FilterTrace
    smooth_mean: np.ndarray
    smooth_cov: np.ndarray
    gains: np.ndarray  # gains[k] links step k to k+1; the last entry is zero
    repairs: int = 0

    def __len__(self):
        return self.smooth_mean.shape[0]

    def smoothed(self, k: int) -> GaussianBelief:
        return GaussianBelief(self.smooth_mean[k], self.smooth_cov[k])

    def filtered(self, k: int) -> GaussianBelief:
        return GaussianBelief(self.filter.filt_mean[k], self.filter.filt_cov[k])


def smoother_gain(cross_cov, pred_cov_next) -> np.ndarray:
    """Solve ``G P = L`` for the smoother gain without forming ``P^-1``.

    A singular ``P`` gets one retry with a small diagonal jitter before the
    ``LinAlgError`` propagates.
    """
    L = np.asarray(cross_cov, dtype=float)
    P = np.asarray(pred_cov_next, dtype=float)
    try:
        cf = cho_factor(P, lower=True, check_finite=False)
    except LinAlgError:
        jitter = default_floor(P) * 1e2 + 1e-12
        cf = cho_factor(P + jitter * np.eye(P.shape[0]), lower=True, check_finite=False)
    # G = L P^-1  <=>  G^T = P^-1 L^T
    return cho_solve(cf, L.T, check_finite=False).T


def backward_pass(trace: FilterTrace) -> SmootherTrace:
    T = len(trace)
    n = trace.prior.dim
    xs = np.empty((T, n))
    Ps = np.empty((T, n, n))
    gains = np.zeros((T, n, n))
    repairs = 0
    if T == 0:
        return SmootherTrace(trace, xs, Ps, gains)
    xs[-1] = trace.filt_mean[-1]
    Ps[-1] = trace.filt_cov[-1]
    for k in range(T - 2, -1, -1):
        G = smoother_gain(trace.cross_cov[k + 1], trace.pred_cov[k + 1])
        gains[k] = G
        xs[k] = trace.filt_mean[k] + G @ (xs[k + 1] - trace.pred_mean[k + 1])
        P = trace.filt_cov[k] + G @ (Ps[k + 1] - trace.pred_cov[k + 1]) @ G.T
        P = 0.5 * (P + P.T)
        if not (np.all(np.isfinite(xs[k])) and np.all(np.isfinite(P))):
            raise SmootherDivergence("non-finite smoothed state", step=k)
        if np.linalg.eigvalsh(P)[0] < default_floor(P):
            P = nearest_pd(P)
            repairs += 1
            logger.info("smoothed covariance repaired to positive definite at step %d", k)
        Ps[k] = P
    return SmootherTrace(trace, xs, Ps, gains, repairs)
