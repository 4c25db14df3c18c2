"""Scenario configuration and per-run dataset synthesis.

A scenario is a YAML mapping; every key is optional and falls back to the
defaults below. Example::

    model: coordinated-turn   # or random-walk (range-only UWB scenario)
    T: 100
    m: 50
    lam: 0.4
    sigma_factor: 31.6227766
    methods: [asor, sor, ror, ideal]
    runs: 50
    seed: 2024
    hp:
      a: 0.1
      theta: 0.5
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .models import coordinated_turn_model, random_walk_model
from .simulate import build_sensor_grid, simulate_measurements, simulate_trajectory, simulate_uwb_scenario
from .unscented import GaussianBelief
from .vb import METHODS, VbHyperparams

MODELS = ("coordinated-turn", "random-walk")


class ConfigError(ValueError):
    """Invalid scenario configuration."""


@dataclass(frozen=True)
class ScenarioConfig:
    model: str = "coordinated-turn"
    T: int = 100
    m: int = 50
    dt: float = 1.0
    eta1: float = 0.1
    eta2: float = 1.75e-4
    vartheta: float = 10.0
    x0_mean: tuple = (0.0, 10.0, 0.0, -5.0, math.pi / 180.0)
    lam: float = 0.4
    sigma_factor: float = math.sqrt(1000.0)
    kappa: float = 0.0
    hp: VbHyperparams = field(default_factory=VbHyperparams)
    methods: tuple = ("asor", "sor", "ror", "ideal")
    runs: int = 50
    seed: int = 0
    out: str = "results"
    workers: int = 1
    # random-walk (UWB) scenario
    anchors: int = 11
    max_visible: int = 4
    nlos_prob: float = 0.2
    nlos_bias: tuple = (1.0, 5.0)
    q: float = 0.1
    r: float = 0.1
    drop_prob: float = 0.1
    start: tuple = (10.0, 6.0)

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if not self.methods:
            raise ConfigError("methods must be non-empty")
        bad = [mth for mth in self.methods if mth not in METHODS]
        if bad:
            raise ConfigError(f"unknown method(s) {bad}; expected a subset of {METHODS}")
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.model == "coordinated-turn" and (self.m < 2 or self.m % 2):
            raise ConfigError("m must be even and >= 2 for the sensor grid")
        if self.model == "coordinated-turn" and len(self.x0_mean) != 5:
            raise ConfigError("x0_mean needs 5 entries for the coordinated-turn state")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lam must lie in [0, 1]")
        if self.sigma_factor < 0 or self.vartheta < 0 or self.dt <= 0:
            raise ConfigError("sigma_factor and vartheta must be >= 0 and dt > 0")
        if self.n_plus_kappa <= 0:
            raise ConfigError("kappa must satisfy n + kappa > 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def n_plus_kappa(self) -> float:
        return (5 if self.model == "coordinated-turn" else 2) + self.kappa

    def with_overrides(self, **kw) -> "ScenarioConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        try:
            return replace(self, **kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


def config_from_dict(raw: dict | None) -> ScenarioConfig:
    raw = dict(raw or {})
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {unknown}")
    hp_raw = raw.pop("hp", None) or {}
    if not isinstance(hp_raw, dict):
        raise ConfigError("hp must be a mapping")
    hp_known = {f.name for f in fields(VbHyperparams)}
    bad = sorted(set(hp_raw) - hp_known)
    if bad:
        raise ConfigError(f"unknown hp key(s): {bad}")
    for key in ("methods", "x0_mean", "nlos_bias", "start"):
        if key in raw:
            if isinstance(raw[key], str):
                raw[key] = [s.strip() for s in raw[key].split(",") if s.strip()]
            raw[key] = tuple(raw[key])
    try:
        hp = VbHyperparams(**hp_raw)
        return ScenarioConfig(hp=hp, **raw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)


def build_model(config: ScenarioConfig):
    if config.model == "coordinated-turn":
        return coordinated_turn_model(config.dt, config.eta1, config.eta2)
    return random_walk_model(config.q, dim=2, dt=config.dt)


def initial_belief(config: ScenarioConfig, model=None) -> GaussianBelief:
    """Prior on ``x_0``: ``N(x0_mean, vartheta * Q)``; the walk starts at ``start``."""
    model = model or build_model(config)
    if config.model == "coordinated-turn":
        return GaussianBelief(np.array(config.x0_mean, dtype=float), config.vartheta * model.process_noise)
    return GaussianBelief(np.array(config.start, dtype=float), config.vartheta * model.process_noise)


def run_seeds(seed: int, runs: int) -> list[np.random.SeedSequence]:
    """Independent, reproducible child seeds, one per Monte Carlo run."""
    return np.random.SeedSequence(seed).spawn(runs)


@dataclass
class RunData:
    states: np.ndarray  # (T + 1, n) including x_0
    data: object
    truth: object  # OutlierGroundTruth


def make_run_data(config: ScenarioConfig, seed_seq: np.random.SeedSequence, model=None) -> RunData:
    model = model or build_model(config)
    traj_seed, meas_seed = seed_seq.spawn(2)
    if config.model == "coordinated-turn":
        prior = initial_belief(config, model)
        states = simulate_trajectory(model, prior.mean, prior.cov, config.T, seed=traj_seed)
        data, gt = simulate_measurements(states[1:], build_sensor_grid(config.m), config.lam,
                                         config.sigma_factor, seed=meas_seed)
        return RunData(states, data, gt)
    dataset, gt, states = simulate_uwb_scenario(
        T=config.T, n_anchors=config.anchors, max_visible=config.max_visible, nlos_prob=config.nlos_prob,
        nlos_bias=tuple(config.nlos_bias), q=config.q, r=config.r, drop_prob=config.drop_prob,
        start=tuple(config.start), seed=meas_seed,
    )
    return RunData(states, dataset.measurements, gt)
