"""Gaussian divergences and positive-definite repair."""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve


def default_floor(M: np.ndarray) -> float:
    """Scale-aware eigenvalue floor ``1e-10 * max(1, tr(M)/n)``."""
    n = M.shape[0]
    return 1e-10 * max(1.0, float(np.trace(M)) / n)


def nearest_pd(M, floor: float | None = None) -> np.ndarray:
    """Nearest symmetric matrix (Frobenius norm) with eigenvalues >= ``floor``.

    The symmetric part is eigendecomposed and its eigenvalues are clipped
    from below. A matrix that already satisfies the floor comes back as its
    symmetric part.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("nearest_pd expects a square matrix")
    S = 0.5 * (M + M.T)
    if floor is None:
        floor = default_floor(S)
    vals, vecs = np.linalg.eigh(S)
    if vals[0] >= floor:
        return S
    vals = np.maximum(vals, floor)
    out = (vecs * vals) @ vecs.T
    return 0.5 * (out + out.T)


def is_pd(M) -> bool:
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return False
    return True


def kl_gaussian(mean0, cov0, mean1, cov1) -> float:
    """KL(N(mean0, cov0) || N(mean1, cov1)) via Cholesky log-determinants.

    Raises ``numpy.linalg.LinAlgError`` if either covariance is not
    positive definite.
    """
    mean0 = np.atleast_1d(np.asarray(mean0, dtype=float))
    mean1 = np.atleast_1d(np.asarray(mean1, dtype=float))
    cov0 = np.atleast_2d(np.asarray(cov0, dtype=float))
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=float))
    n = mean0.shape[0]
    c1 = cho_factor(cov1, lower=True)
    L0 = np.linalg.cholesky(cov0)
    logdet1 = 2.0 * np.sum(np.log(np.diag(c1[0])))
    logdet0 = 2.0 * np.sum(np.log(np.diag(L0)))
    diff = mean1 - mean0
    trace_term = np.trace(cho_solve(c1, cov0))
    maha = diff @ cho_solve(c1, diff)
    kl = 0.5 * (trace_term - n + maha + logdet1 - logdet0)
    return max(float(kl), 0.0)
