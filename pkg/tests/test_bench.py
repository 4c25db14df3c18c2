import csv
import json
import math

import jsonschema
import numpy as np
import pytest

from oracles import rmse_two_pass
from robust_rts.bench import (
    RUNS_HEADER,
    SUMMARY_SCHEMA,
    RunResult,
    emit_reports,
    read_runs_csv,
    rmse,
    run_monte_carlo,
    summarize,
    timing_sweep,
)
from robust_rts.config import ConfigError, ScenarioConfig, config_from_dict, load_config

SMALL = dict(T=20, m=6, runs=3, seed=17)


class TestRmse:
    def test_zero(self, rng):
        x = rng.standard_normal((10, 5))
        assert rmse(x, x) == 0.0

    def test_pythagoras(self):
        truth = np.zeros((7, 5))
        est = truth.copy()
        est[:, 0], est[:, 2] = 3.0, 4.0
        assert rmse(est, truth) == pytest.approx(5.0)

    def test_oracle(self, rng):
        a, b = rng.standard_normal((30, 5)), rng.standard_normal((30, 5))
        assert rmse(a, b) == pytest.approx(rmse_two_pass(a, b, (0, 2)))

    def test_mismatch(self):
        with pytest.raises(ValueError):
            rmse(np.zeros((3, 5)), np.zeros((4, 5)))


class TestConfig:
    def test_defaults(self):
        c = ScenarioConfig()
        assert c.T == 100 and c.m == 50 and c.vartheta == 10 and c.sigma_factor == pytest.approx(math.sqrt(1000))

    @pytest.mark.parametrize("raw", [{"runs": 0}, {"methods": []}, {"methods": ["magic"]}, {"model": "x"},
                                     {"m": 5}, {"lam": 2}, {"bogus": 1}, {"hp": {"A": 0.5}}, {"hp": {"zz": 1}}])
    def test_invalid(self, raw):
        with pytest.raises(ConfigError):
            config_from_dict(raw)

    def test_yaml(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("T: 30\nmethods: asor, sor\nhp:\n  a: 0.5\n")
        c = load_config(p)
        assert c.T == 30 and c.methods == ("asor", "sor") and c.hp.a == 0.5

    def test_bad_yaml(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("T: [1,\n")
        with pytest.raises(ConfigError):
            load_config(p)
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.yaml")


class TestMonteCarlo:
    def test_deterministic(self):
        cfg = ScenarioConfig(lam=0.3, methods=("asor", "ideal"), **SMALL)
        a = [(r.method, r.run, r.rmse, r.iterations) for r in run_monte_carlo(cfg)]
        b = [(r.method, r.run, r.rmse, r.iterations) for r in run_monte_carlo(cfg)]
        assert a == b
        assert len(a) == 6

    def test_plain_equals_ideal_without_outliers(self):
        cfg = ScenarioConfig(lam=0.0, methods=("plain", "ideal"), **SMALL)
        s = summarize(run_monte_carlo(cfg))
        assert s["plain"]["mean_rmse"] == pytest.approx(s["ideal"]["mean_rmse"], rel=0.05)

    def test_divergence_recorded(self, monkeypatch):
        from robust_rts import bench
        from robust_rts.unscented import SmootherDivergence

        real = bench.run_method

        def flaky(method, *a, **k):
            if method == "sor":
                raise SmootherDivergence("boom", step=3)
            return real(method, *a, **k)

        monkeypatch.setattr(bench, "run_method", flaky)
        res = run_monte_carlo(ScenarioConfig(lam=0.2, methods=("sor", "ideal"), **SMALL))
        bad = [r for r in res if r.method == "sor"]
        assert all(r.diverged and math.isnan(r.rmse) for r in bad)
        s = summarize(res)
        assert s["sor"]["divergences"] == 3 and s["sor"]["mean_rmse"] is None
        assert s["ideal"]["divergences"] == 0

    def test_worker_pool_matches_serial(self):
        cfg = ScenarioConfig(lam=0.2, methods=("sor",), **SMALL)
        serial = [(r.run, r.rmse) for r in run_monte_carlo(cfg)]
        pooled = [(r.run, r.rmse) for r in run_monte_carlo(cfg.with_overrides(workers=2))]
        assert serial == pooled

    def test_random_walk_scenario(self):
        cfg = ScenarioConfig(model="random-walk", T=30, runs=2, seed=1, methods=("asor", "ideal"))
        res = run_monte_carlo(cfg)
        assert all(r.rmse < 2.0 for r in res)


class TestReports:
    def test_empty(self, tmp_path):
        emit_reports([], tmp_path)
        assert (tmp_path / "runs.csv").read_text() == ",".join(RUNS_HEADER) + "\n"
        assert json.loads((tmp_path / "summary.json").read_text()) == {"methods": {}}

    def test_round_trip_and_schema(self, tmp_path):
        cfg = ScenarioConfig(lam=0.3, methods=("asor", "sor", "ideal"), **SMALL)
        traj = {}
        results = run_monte_carlo(cfg, traj)
        emit_reports(results, tmp_path, traj, cfg)
        back = read_runs_csv(tmp_path / "runs.csv")
        assert back == results
        summary = json.loads((tmp_path / "summary.json").read_text())
        jsonschema.validate(summary, SUMMARY_SCHEMA)
        assert summary["methods"] == json.loads(json.dumps(summarize(back)))
        with open(tmp_path / "trajectory_0.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][:3] == ["t", "truth_x", "truth_y"] and "asor_x" in rows[0]
        assert len(rows) == cfg.T + 1
        assert sorted(p.name for p in tmp_path.glob("trajectory_*.csv")) == [
            f"trajectory_{i}.csv" for i in range(3)]

    def test_runs_csv_byte_identical(self, tmp_path):
        cfg = ScenarioConfig(lam=0.3, methods=("sor",), **SMALL)
        emit_reports(run_monte_carlo(cfg), tmp_path / "a")
        emit_reports(run_monte_carlo(cfg), tmp_path / "b")
        strip = lambda p: [r[:3] + r[4:] for r in csv.reader(open(p))]  # wall time varies
        assert strip(tmp_path / "a" / "runs.csv") == strip(tmp_path / "b" / "runs.csv")

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError, match="file"):
            emit_reports([RunResult("sor", 0, 1.0, 0.1, 3)], blocker / "out")


def test_timing_sweep_shape():
    rep = timing_sweep(ScenarioConfig(T=10, seed=1, methods=("sor",)), m_values=(4, 8), repeats=1)
    assert set(rep.times) == {("sor", 4), ("sor", 8)}
    assert np.isfinite(rep.slope["sor"]) and 0 <= rep.r_squared["sor"] <= 1
