"""Command-line entry point.

Exit status is 0 on success, 1 for configuration or usage errors and 2 when
a run fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench, diagnostics
from .config import ConfigError, ScenarioConfig, build_model, initial_belief, load_config, make_run_data, run_seeds
from .models import SensorSuite
from .simulate import DatasetFormatError, MeasurementSet, UwbDataset, load_uwb_csv, write_uwb_csv
from .vb import METHODS, run_method

logger = logging.getLogger("robust_rts")

DEFAULT_PIF_SCALES = (math.sqrt(10.0), math.sqrt(100.0), math.sqrt(1000.0), math.sqrt(10000.0))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list[float]:
    try:
        return [float(eval_number(t)) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def eval_number(text: str) -> float:
    """Parse a float, also accepting ``sqrt(x)``."""
    t = text.strip()
    if t.startswith("sqrt(") and t.endswith(")"):
        return math.sqrt(float(t[5:-1]))
    return float(t)


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _methods(text: str) -> tuple[str, ...]:
    items = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = [t for t in items if t not in METHODS]
    if bad or not items:
        raise argparse.ArgumentTypeError(f"methods must be a comma list from {', '.join(METHODS)}")
    return items


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML scenario file")
    common.add_argument("--seed", type=_seed)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--methods", type=_methods)
    common.add_argument("--runs", type=int)
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="robust-rts", description="Outlier-robust unscented RTS smoothing experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("simulate", parents=[common], help="write simulated datasets")

    p = sub.add_parser("smooth", parents=[common], help="run smoothers on a dataset file or UWB CSV directory")
    p.add_argument("input", type=Path, help=".npz dataset from 'simulate' or a UWB CSV directory")
    p.add_argument("--noise-variance", type=float, default=0.1, help="UWB range variance (m^2)")
    p.add_argument("--log-file", type=Path, help="append per-iteration VB diagnostics here")

    p = sub.add_parser("bench", parents=[common], help="Monte Carlo RMSE benchmark")
    p.add_argument("--lams", type=_float_list, help="outlier probabilities to sweep")
    p.add_argument("--ms", type=_int_list, help="sensor counts to sweep")
    p.add_argument("--timing", type=_int_list, metavar="M_LIST", help="run a timing sweep over these sensor counts")
    p.add_argument("--trajectories", action="store_true", help="also write trajectory_<run>.csv files")

    p = sub.add_parser("pif", parents=[common], help="posterior influence function sweep")
    p.add_argument("--scales", type=_float_list, help="corruption scales (default sqrt of 10, 100, 1000, 10000)")

    p = sub.add_parser("imq-compare", parents=[common], help="ASOR with and without IMQ first-pass weights")
    p.add_argument("--lams", type=_float_list, help="outlier probabilities (default 0.2,0.4,0.6)")
    return parser


def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if args.runs is not None and args.runs < 1:
        raise ConfigError("--runs must be >= 1")
    return cfg.with_overrides(seed=args.seed, methods=args.methods, runs=args.runs,
                              out=str(args.out) if args.out else None)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_simulate(cfg: ScenarioConfig, args) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg)
    for run, ss in enumerate(run_seeds(cfg.seed, cfg.runs)):
        rd = make_run_data(cfg, ss, model)
        if cfg.model == "random-walk":
            ds = UwbDataset(rd.data, list(rd.data.sensors.ids), np.column_stack(
                [rd.data.sensors.positions, rd.data.sensors.z_offset]), rd.states[1:], rd.data.times)
            write_uwb_csv(out / f"uwb_{run}", ds)
        else:
            save_npz(out / f"dataset_{run}.npz", rd.data, rd.states, rd.truth.mask)
    print(f"wrote {cfg.runs} dataset(s) to {out}")
    return 0


def save_npz(path, data: MeasurementSet, states=None, outlier_mask=None) -> Path:
    s = data.sensors
    np.savez(path, values=data.values, mask=data.mask, times=data.times, kinds=np.asarray(s.kinds, dtype=str),
             positions=s.positions, noise_variance=s.noise_variance, z_offset=s.z_offset,
             position_index=np.asarray(s.position_index),
             states=np.empty((0, 0)) if states is None else states,
             outlier_mask=np.zeros((0, 0), dtype=bool) if outlier_mask is None else outlier_mask)
    return Path(path)


def load_npz(path):
    """Inverse of :func:`save_npz`: ``(MeasurementSet, states or None, outlier mask or None)``."""
    try:
        z = np.load(path, allow_pickle=False)
        sensors = SensorSuite(list(z["kinds"]), z["positions"], z["noise_variance"], z["z_offset"],
                              tuple(int(i) for i in z["position_index"]))
        data = MeasurementSet(z["values"], z["mask"], sensors, z["times"])
        states = z["states"] if z["states"].size else None
        om = z["outlier_mask"] if z["outlier_mask"].size else None
    except (KeyError, ValueError, OSError) as exc:
        raise DatasetFormatError(f"{path}: not a dataset file: {exc}") from exc
    return data, states, om


def cmd_smooth(cfg: ScenarioConfig, args) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    inp = args.input
    if inp.is_dir() or inp.suffix == ".csv":
        ds = load_uwb_csv(inp, noise_variance=args.noise_variance)
        data, outlier_mask = ds.measurements, None
        truth = ds.truth
        cfg = replace(cfg, model="random-walk")
        model = build_model(cfg)
        x0_mean = truth[0] if truth is not None and len(truth) else np.mean(ds.anchor_positions[:, :2], axis=0)
        x0 = initial_belief(replace(cfg, start=tuple(float(v) for v in x0_mean)), model)
    else:
        data, states, outlier_mask = load_npz(inp)
        model = build_model(cfg)
        x0 = initial_belief(cfg, model)
        truth = states[1:][:, list(model.position_index)] if states is not None else None
    summary = {}
    pidx = list(model.position_index)
    for method in cfg.methods:
        if method == "ideal" and outlier_mask is None:
            logger.warning("skipping ideal: dataset has no ground-truth outlier mask")
            continue
        res = run_method(method, model, data, x0, cfg.hp, cfg.kappa, outlier_mask=outlier_mask,
                         log_file=args.log_file)
        est = res.smooth_mean
        np.savetxt(out / f"estimate_{method}.csv", est, delimiter=",", comments="",
                   header=",".join(f"x{i}" for i in range(est.shape[1])))
        entry = {"iterations": res.iterations, "converged": res.converged}
        if truth is not None and len(truth) == len(est):
            entry["rmse"] = bench.rmse(est[:, pidx], truth, (0, 1))
        summary[method] = entry
        print(method, " ".join(f"{k}={v}" for k, v in entry.items()))
    _write_json(out / "smooth_summary.json", summary)
    return 0


def cmd_bench(cfg: ScenarioConfig, args) -> int:
    out = Path(cfg.out)
    cells = [(lam, m) for lam in (args.lams or [cfg.lam]) for m in (args.ms or [cfg.m])]
    for lam, m in cells:
        cell_cfg = replace(cfg, lam=lam, m=m)
        cell_out = out if len(cells) == 1 else out / f"lam{lam:g}_m{m}"
        trajectories = {} if args.trajectories else None
        results = bench.run_monte_carlo(cell_cfg, trajectories)
        bench.emit_reports(results, cell_out, trajectories, cell_cfg)
        for method, s in bench.summarize(results).items():
            print(f"lam={lam:g} m={m} {method}: mean_rmse={s['mean_rmse']} divergences={s['divergences']}")
    if args.timing:
        rep = bench.timing_sweep(cfg, args.timing)
        _write_json(out / "timing.json", {
            "m_values": rep.m_values,
            "median_seconds": {f"{k[0]}@{k[1]}": v for k, v in rep.times.items()},
            "slope": rep.slope, "r_squared": rep.r_squared,
        })
        for method in rep.slope:
            print(f"timing {method}: slope={rep.slope[method]:.3f} r2={rep.r_squared[method]:.3f}")
    return 0


def cmd_pif(cfg: ScenarioConfig, args) -> int:
    out = Path(cfg.out)
    scales = args.scales or list(DEFAULT_PIF_SCALES)
    reports = diagnostics.pif_sweep(cfg, scales)
    diagnostics.write_pif_csv(reports, out / "pif.csv")
    summary = diagnostics.summarize_pif(reports)
    _write_json(out / "pif_summary.json", [{"method": k[0], "sigma": k[1], **v} for k, v in sorted(summary.items())])
    for (method, scale), s in sorted(summary.items()):
        print(f"{method} sigma={scale:.4g}: median={s['median']:.4g} max={s['max']:.4g}")
    return 0


def cmd_imq_compare(cfg: ScenarioConfig, args) -> int:
    out = Path(cfg.out)
    rows = {}
    for lam in args.lams or [0.2, 0.4, 0.6]:
        cell_cfg = replace(cfg, lam=lam, methods=("asor", "asor-imq"))
        results = bench.run_monte_carlo(cell_cfg)
        bench.emit_reports(results, out / f"lam{lam:g}", config=cell_cfg)
        s = bench.summarize(results)
        a, b = s["asor"], s["asor-imq"]
        ratio = b["mean_rmse"] / a["mean_rmse"] if a["mean_rmse"] and b["mean_rmse"] else None
        rows[f"{lam:g}"] = {"asor": a, "asor-imq": b, "rmse_ratio": ratio}
        print(f"lam={lam:g}: asor={a['mean_rmse']} asor-imq={b['mean_rmse']} ratio={ratio} "
              f"divergences={a['divergences']}/{b['divergences']}")
    _write_json(out / "imq_compare.json", rows)
    return 0


COMMANDS = {"simulate": cmd_simulate, "smooth": cmd_smooth, "bench": cmd_bench, "pif": cmd_pif,
            "imq-compare": cmd_imq_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any failure of a run maps to exit status 2
        logger.debug("run failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
