"""Monte Carlo benchmarks, timing sweeps and report files."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .config import ScenarioConfig, build_model, initial_belief, make_run_data, run_seeds
from .unscented import SmootherDivergence
from .vb import run_method

logger = logging.getLogger(__name__)

RUNS_HEADER = ["method", "run", "rmse", "wall_time", "iterations", "diverged"]

SUMMARY_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["methods"],
    "properties": {
        "config": {"type": "object"},
        "methods": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["runs", "mean_rmse", "std_rmse", "mean_wall_time", "divergences"],
                "properties": {
                    "runs": {"type": "integer", "minimum": 0},
                    "mean_rmse": {"type": ["number", "null"], "minimum": 0},
                    "std_rmse": {"type": ["number", "null"], "minimum": 0},
                    "mean_wall_time": {"type": ["number", "null"], "minimum": 0},
                    "mean_iterations": {"type": ["number", "null"], "minimum": 0},
                    "divergences": {"type": "integer", "minimum": 0},
                },
            },
        },
    },
}


@dataclass(frozen=True)
class RunResult:
    method: str
    run: int
    rmse: float
    wall_time: float
    iterations: int
    diverged: bool = False


def rmse(estimates, truth, position_index=(0, 2)) -> float:
    """Position RMSE over all steps: ``sqrt(mean_k ||pos(x_hat_k) - pos(x_k)||^2)``."""
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape[0] != tru.shape[0]:
        raise ValueError(f"length mismatch: {est.shape[0]} estimates vs {tru.shape[0]} truth states")
    if est.shape[0] == 0:
        return 0.0
    idx = list(position_index)
    d = est[:, idx] - tru[:, idx]
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def _run_one(config: ScenarioConfig, run: int, seed_seq, keep_positions: bool = False):
    model = build_model(config)
    x0 = initial_belief(config, model)
    rd = make_run_data(config, seed_seq, model)
    truth = rd.states[1:]
    pidx = model.position_index
    results, positions = [], {"truth": truth[:, list(pidx)]}
    for method in config.methods:
        start = time.perf_counter()
        try:
            res = run_method(method, model, rd.data, x0, config.hp, config.kappa, outlier_mask=rd.truth.mask)
            xs = res.smooth_mean
            if not np.all(np.isfinite(xs)):
                raise SmootherDivergence("non-finite smoothed state")
            err, iters, diverged = rmse(xs, truth, pidx), res.iterations, False
            if keep_positions:
                positions[method] = xs[:, list(pidx)]
        except (SmootherDivergence, np.linalg.LinAlgError, FloatingPointError) as exc:
            logger.warning("run %d: %s diverged: %s", run, method, exc)
            err, iters, diverged = math.nan, 0, True
            if keep_positions:
                positions[method] = np.full((len(truth), 2), np.nan)
        wall = max(time.perf_counter() - start, 1e-9)
        results.append(RunResult(method, run, err, wall, iters, diverged))
    return results, (positions if keep_positions else None)


def run_monte_carlo(config: ScenarioConfig, trajectories: dict | None = None) -> list[RunResult]:
    """Run every configured method on ``config.runs`` seed-derived datasets.

    Failed runs come back with ``diverged=True`` and a NaN RMSE. Passing a
    dict as ``trajectories`` collects per-run true and estimated positions,
    keyed by run index.
    """
    seeds = run_seeds(config.seed, config.runs)
    keep = trajectories is not None
    if config.workers > 1 and config.runs > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outs = list(pool.map(_run_one, [config] * config.runs, range(config.runs), seeds,
                                 [keep] * config.runs))
    else:
        outs = [_run_one(config, run, ss, keep) for run, ss in enumerate(seeds)]
    results = []
    for run, (res, pos) in enumerate(outs):
        results.extend(res)
        if keep:
            trajectories[run] = pos
    return results


def summarize(results) -> dict:
    """Per-method aggregates; divergent runs are counted but left out of the means."""
    out = {}
    for method in dict.fromkeys(r.method for r in results):
        rows = [r for r in results if r.method == method]
        ok = [r for r in rows if not r.diverged]
        errs = np.array([r.rmse for r in ok], dtype=float)
        out[method] = {
            "runs": len(rows),
            "mean_rmse": float(np.mean(errs)) if ok else None,
            "std_rmse": float(np.std(errs, ddof=1)) if len(ok) > 1 else (0.0 if ok else None),
            "mean_wall_time": float(np.mean([r.wall_time for r in rows])) if rows else None,
            "mean_iterations": float(np.mean([r.iterations for r in ok])) if ok else None,
            "divergences": len(rows) - len(ok),
        }
    return out


def write_runs_csv(results, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUNS_HEADER)
        for r in results:
            w.writerow([r.method, r.run, repr(float(r.rmse)), repr(float(r.wall_time)), r.iterations,
                        "true" if r.diverged else "false"])
    return path


def read_runs_csv(path) -> list[RunResult]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RUNS_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [RunResult(row["method"], int(row["run"]), float(row["rmse"]), float(row["wall_time"]),
                          int(row["iterations"]), row["diverged"] == "true") for row in reader]


def emit_reports(results, out_dir, trajectories: dict | None = None, config: ScenarioConfig | None = None) -> list[Path]:
    """Write ``runs.csv``, ``summary.json`` and one ``trajectory_<run>.csv`` per collected run."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        written = [write_runs_csv(results, out_dir / "runs.csv")]
        summary = {"methods": summarize(results)}
        if config is not None:
            summary["config"] = config.to_dict()
        path = out_dir / "summary.json"
        path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(path)
        for run, pos in sorted((trajectories or {}).items()):
            written.append(_write_trajectory(out_dir / f"trajectory_{run}.csv", pos))
    except OSError as exc:
        raise OSError(f"cannot write reports to {out_dir}: {exc}") from exc
    return written


def _write_trajectory(path: Path, positions: dict) -> Path:
    methods = [k for k in positions if k != "truth"]
    truth = positions["truth"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "truth_x", "truth_y"] + [f"{m}_{c}" for m in methods for c in ("x", "y")])
        for k in range(truth.shape[0]):
            row = [k + 1, repr(float(truth[k, 0])), repr(float(truth[k, 1]))]
            for m in methods:
                row += [repr(float(positions[m][k, 0])), repr(float(positions[m][k, 1]))]
            w.writerow(row)
    return path


@dataclass
class TimingReport:
    m_values: list[int]
    times: dict  # (method, m) -> median seconds
    slope: dict = field(default_factory=dict)
    r_squared: dict = field(default_factory=dict)


def timing_sweep(config: ScenarioConfig, m_values=(50, 100, 150, 200), repeats: int = 3,
                 methods=None) -> TimingReport:
    """Median wall time per ``(method, m)`` and the log-log slope in ``m``.

    Every method is timed on the same dataset for a given ``m``. One
    untimed call per method warms up caches first.
    """
    methods = tuple(methods or config.methods)
    model = build_model(config)
    x0 = initial_belief(config, model)
    times = {}
    seeds = run_seeds(config.seed, len(m_values))
    for m, ss in zip(m_values, seeds):
        cfg = replace(config, m=int(m))
        rd = make_run_data(cfg, ss, model)
        for method in methods:
            if m == m_values[0]:
                run_method(method, model, rd.data, x0, cfg.hp, cfg.kappa, outlier_mask=rd.truth.mask)
            samples = []
            for _ in range(repeats):
                start = time.perf_counter()
                run_method(method, model, rd.data, x0, cfg.hp, cfg.kappa, outlier_mask=rd.truth.mask)
                samples.append(time.perf_counter() - start)
            times[(method, int(m))] = float(np.median(samples))
    report = TimingReport([int(m) for m in m_values], times)
    if len(m_values) >= 2:
        lx = np.log(np.asarray(m_values, dtype=float))
        for method in methods:
            fit = stats.linregress(lx, np.log([times[(method, int(m))] for m in m_values]))
            report.slope[method] = float(fit.slope)
            report.r_squared[method] = float(fit.rvalue**2)
    return report
