"""Gaussian KL divergence and posterior influence functions (PIF) for smoothers.

The PIF of a smoother at step ``k_c`` is the KL divergence from the smoothed
marginal computed with a corrupted reading vector at ``k_c`` to the one
computed from the original data. A smoother is outlier-robust when this
stays bounded however large the corruption.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ScenarioConfig, build_model, initial_belief, make_run_data, run_seeds
from .linalg import is_pd, kl_gaussian, nearest_pd
from .models import wrap_angle
from .unscented import GaussianBelief
from .vb import SmootherResult, VbHyperparams, run_method

logger = logging.getLogger(__name__)

__all__ = ["gaussian_kl", "nearest_pd", "PifReport", "pif", "pif_trajectory", "pif_sweep",
           "corrupt_step", "write_pif_csv", "summarize_pif"]

PIF_CSV_HEADER = ["method", "sigma", "run", "k_c", "pif"]


def _repaired(cov):
    return cov if is_pd(cov) else nearest_pd(cov)


def gaussian_kl(g0: GaussianBelief, g1: GaussianBelief) -> float:
    """``KL(g0 || g1)``; non-PD covariances are repaired first."""
    if g0.dim != g1.dim:
        raise ValueError(f"dimension mismatch: {g0.dim} vs {g1.dim}")
    return kl_gaussian(g0.mean, _repaired(g0.cov), g1.mean, _repaired(g1.cov))


@dataclass(frozen=True)
class PifReport:
    method: str
    corruption_scale: float
    corrupted_step: int
    pif_value: float
    run: int = 0


def _smooth(method, model, data, x0, hp, kappa, outlier_mask=None) -> SmootherResult:
    return run_method(method, model, data, x0, hp, kappa, outlier_mask=outlier_mask)


def _replace_step(data, k_c: int, y_corrupt):
    T = data.values.shape[0]
    if not 1 <= k_c <= T:
        raise ValueError(f"k_c must lie in [1, {T}], got {k_c}")
    y_corrupt = np.asarray(y_corrupt, dtype=float)
    if y_corrupt.shape != data.values[k_c - 1].shape:
        raise ValueError("corrupted vector has the wrong length")
    values = data.values.copy()
    values[k_c - 1] = np.where(data.mask[k_c - 1], y_corrupt, values[k_c - 1])
    return replace(data, values=values)


def pif(method: str, model, data, y_corrupt, k_c: int, x0: GaussianBelief,
        hp: VbHyperparams = VbHyperparams(), kappa: float = 0.0, clean: SmootherResult | None = None,
        outlier_mask=None) -> float:
    """PIF of ``method`` when the readings at step ``k_c`` (1-based) become ``y_corrupt``.

    ``clean`` may carry a precomputed result on the unmodified data. The
    corrupted-data posterior is the first KL argument.
    """
    corrupted = _replace_step(data, k_c, y_corrupt)
    try:
        if clean is None:
            clean = _smooth(method, model, data, x0, hp, kappa, outlier_mask)
        dirty = _smooth(method, model, corrupted, x0, hp, kappa, outlier_mask)
    except Exception as exc:
        raise RuntimeError(f"{method} smoother failed during PIF evaluation at k_c={k_c}: {exc}") from exc
    return gaussian_kl(dirty.trace.smoothed(k_c - 1), clean.trace.smoothed(k_c - 1))


def pif_trajectory(clean: SmootherResult, dirty: SmootherResult) -> float:
    """Summed marginal KL over all steps.

    A secondary diagnostic of how far a corruption spreads along the
    trajectory; it is not the single-step PIF.
    """
    return float(sum(gaussian_kl(dirty.trace.smoothed(k), clean.trace.smoothed(k)) for k in range(len(clean.trace))))


def corrupt_step(data, k_c: int, scale: float, direction) -> np.ndarray:
    """Readings at ``k_c`` shifted by ``scale * direction`` nominal standard deviations per sensor."""
    sensors = data.sensors
    y = data.values[k_c - 1] + scale * np.asarray(direction, dtype=float) * np.sqrt(sensors.noise_variance)
    ang = sensors.angular
    y[ang] = wrap_angle(y[ang])
    return y


def pif_sweep(config: ScenarioConfig, scales, runs: int | None = None, methods=None) -> list[PifReport]:
    """Monte Carlo PIF sweep.

    Each run draws a dataset from ``config`` (outlier rate ``config.lam``),
    a corruption step uniformly in ``1..T``, and one standard-normal
    direction that is reused across ``scales`` so the corruption only grows
    in magnitude. Every method sees identical data.
    """
    runs = config.runs if runs is None else runs
    if runs < 1:
        raise ValueError("runs must be >= 1")
    methods = tuple(methods or config.methods)
    model = build_model(config)
    x0 = initial_belief(config, model)
    reports: list[PifReport] = []
    for run, ss in enumerate(run_seeds(config.seed, runs)):
        data_seed, pif_seed = ss.spawn(2)
        rd = make_run_data(config, data_seed, model)
        rng = np.random.default_rng(pif_seed)
        k_c = int(rng.integers(1, config.T + 1))
        direction = rng.standard_normal(rd.data.sensors.size)
        clean = {mth: _smooth(mth, model, rd.data, x0, config.hp, config.kappa, rd.truth.mask) for mth in methods}
        for scale in scales:
            y_c = corrupt_step(rd.data, k_c, scale, direction)
            for mth in methods:
                value = pif(mth, model, rd.data, y_c, k_c, x0, config.hp, config.kappa, clean=clean[mth],
                            outlier_mask=rd.truth.mask)
                reports.append(PifReport(mth, float(scale), k_c, value, run))
                logger.debug("pif run=%d method=%s scale=%g k_c=%d value=%g", run, mth, scale, k_c, value)
    return reports


def summarize_pif(reports) -> dict:
    """Median and max PIF per ``(method, scale)``."""
    groups: dict[tuple[str, float], list[float]] = {}
    for r in reports:
        groups.setdefault((r.method, r.corruption_scale), []).append(r.pif_value)
    return {key: {"median": float(np.median(v)), "max": float(np.max(v)), "n": len(v)} for key, v in groups.items()}


def write_pif_csv(reports, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PIF_CSV_HEADER)
        for r in reports:
            w.writerow([r.method, repr(r.corruption_scale), r.run, r.corrupted_step, repr(r.pif_value)])
    return path
