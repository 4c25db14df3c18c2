"""Ground-truth trajectories, contaminated measurements and UWB range logs.

The UWB interchange format is three CSV files in one directory, all UTF-8
with LF line endings:

``measurements.csv``  ``t,anchor_id,range_m``, one row per visible anchor per step
``anchors.csv``       ``anchor_id,x_m,y_m,z_m``
``truth.csv``         ``t,x_m,y_m`` (optional)
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import BEARING, RANGE, DynamicsModel, SensorSuite, wrap_angle

RANGE_VARIANCE = 10.0
BEARING_VARIANCE = (0.2 * np.pi / 180.0) ** 2
GRID_SPACING = 350.0

MEASUREMENT_HEADER = ["t", "anchor_id", "range_m"]
ANCHOR_HEADER = ["anchor_id", "x_m", "y_m", "z_m"]
TRUTH_HEADER = ["t", "x_m", "y_m"]


class DatasetFormatError(ValueError):
    """A dataset file does not follow the documented schema."""


@dataclass
class MeasurementSet:
    values: np.ndarray
    mask: np.ndarray
    sensors: object
    times: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != self.mask.shape:
            raise ValueError("values and mask must have the same shape")
        if self.times is None:
            self.times = np.arange(1, self.values.shape[0] + 1, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        if not np.all(np.isfinite(self.values[self.mask])):
            raise ValueError("measurement values must be finite where present")

    def __len__(self):
        return self.values.shape[0]


@dataclass
class OutlierGroundTruth:
    mask: np.ndarray
    magnitudes: np.ndarray
    clean: np.ndarray | None = None


def build_sensor_grid(m: int, range_variance: float = RANGE_VARIANCE,
                      bearing_variance: float = BEARING_VARIANCE) -> SensorSuite:
    """``m/2`` bearing sensors followed by ``m/2`` range sensors on a 350 m lattice.

    Bearing sensor ``j`` (1-based) sits at ``(350(j-1), 350(j mod 2))`` and
    range sensor ``j`` at ``(350(j-1), 350((j+1) mod 2))``.
    """
    if m < 2 or m % 2:
        raise ValueError(f"sensor count must be even and >= 2, got {m}")
    j = np.arange(1, m // 2 + 1)
    bearing_xy = np.column_stack([GRID_SPACING * (j - 1), GRID_SPACING * (j % 2)])
    range_xy = np.column_stack([GRID_SPACING * (j - 1), GRID_SPACING * ((j + 1) % 2)])
    kinds = [BEARING] * (m // 2) + [RANGE] * (m // 2)
    var = np.r_[np.full(m // 2, bearing_variance), np.full(m // 2, range_variance)]
    return SensorSuite(kinds, np.vstack([bearing_xy, range_xy]), var, position_index=(0, 2))


def simulate_trajectory(model: DynamicsModel, x0_mean, x0_cov, T: int, seed=None) -> np.ndarray:
    """Sample ``x_0 ~ N(x0_mean, x0_cov)`` and roll the dynamics forward.

    Returns a ``(T + 1, n)`` array whose first row is ``x_0``.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    rng = np.random.default_rng(seed)
    n = model.state_dim
    states = np.empty((T + 1, n))
    states[0] = rng.multivariate_normal(np.asarray(x0_mean, dtype=float), np.asarray(x0_cov, dtype=float))
    noise = rng.multivariate_normal(np.zeros(n), model.process_noise, size=T)
    for k in range(1, T + 1):
        states[k] = model.transition(states[k - 1]) + noise[k - 1]
    return states


def simulate_measurements(states, sensors: SensorSuite, lam: float, sigma_factor: float, seed=None):
    """Noisy readings with Bernoulli(``lam``) additive outliers per sensor and step.

    Each outlier is an independent nominal-noise draw scaled by
    ``sigma_factor``. Returns ``(MeasurementSet, OutlierGroundTruth)``.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    if sigma_factor < 0:
        raise ValueError("sigma_factor must be non-negative")
    rng = np.random.default_rng(seed)
    states = np.atleast_2d(np.asarray(states, dtype=float))
    T, m = states.shape[0], sensors.size
    std = np.sqrt(sensors.noise_variance)
    h = sensors.measure(states)
    noise = rng.standard_normal((T, m)) * std
    flags = rng.random((T, m)) < lam
    draws = rng.standard_normal((T, m)) * std * sigma_factor
    magnitudes = np.where(flags, draws, 0.0)
    clean = h + noise
    values = clean + magnitudes
    ang = sensors.angular
    clean[:, ang] = wrap_angle(clean[:, ang])
    values[:, ang] = wrap_angle(values[:, ang])
    data = MeasurementSet(values, np.ones((T, m), dtype=bool), sensors)
    return data, OutlierGroundTruth(flags, magnitudes, clean)


# --- UWB range logs -------------------------------------------------------


@dataclass
class UwbDataset:
    measurements: MeasurementSet
    anchor_ids: list[str]
    anchor_positions: np.ndarray  # (k, 3)
    truth: np.ndarray | None = None  # (T, 2)
    truth_times: np.ndarray | None = None
    extras: dict = field(default_factory=dict)


def _read_rows(path: Path, header: list[str]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None:
            return
        if [c.strip() for c in first] != header:
            raise DatasetFormatError(f"{path}:1: expected header {','.join(header)}, got {','.join(first)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetFormatError(f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}")
            yield reader.line_num, [c.strip() for c in row]


def _number(text: str, path: Path, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DatasetFormatError(f"{path}:{line}: not a number: {text!r}") from None
    if not np.isfinite(value):
        raise DatasetFormatError(f"{path}:{line}: non-finite value {text!r}")
    return value


def uwb_sensors(anchor_positions, ids, noise_variance: float = 0.1, tag_z: float = 0.0) -> SensorSuite:
    pos = np.asarray(anchor_positions, dtype=float).reshape(-1, 3)
    k = pos.shape[0]
    return SensorSuite(
        [RANGE] * k, pos[:, :2], np.full(k, noise_variance),
        z_offset=pos[:, 2] - tag_z, position_index=(0, 1), ids=list(ids),
    )


def load_uwb_csv(path, anchors_path=None, truth_path=None, noise_variance: float = 0.1,
                 tag_z: float = 0.0) -> UwbDataset:
    """Read a UWB range log into a masked, range-only measurement set.

    ``path`` is the measurement CSV or the directory holding it. Anchors and
    truth default to ``anchors.csv`` / ``truth.csv`` next to it; truth is
    optional. Readings absent for a step are masked out.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "measurements.csv"
    anchors_path = Path(anchors_path) if anchors_path else path.with_name("anchors.csv")
    truth_path = Path(truth_path) if truth_path else path.with_name("truth.csv")

    ids: list[str] = []
    positions = []
    if anchors_path.exists():
        for line, (aid, x, y, z) in _read_rows(anchors_path, ANCHOR_HEADER):
            if aid in ids:
                raise DatasetFormatError(f"{anchors_path}:{line}: duplicate anchor id {aid!r}")
            ids.append(aid)
            positions.append([_number(v, anchors_path, line) for v in (x, y, z)])
    index = {aid: i for i, aid in enumerate(ids)}

    rows = []
    for line, (t, aid, rng) in _read_rows(path, MEASUREMENT_HEADER):
        if aid not in index:
            raise DatasetFormatError(f"{path}:{line}: unknown anchor id {aid!r}")
        rows.append((_number(t, path, line), index[aid], _number(rng, path, line), line))

    times = np.array(sorted({r[0] for r in rows}), dtype=float)
    step = {t: i for i, t in enumerate(times)}
    m = len(ids)
    values = np.full((len(times), m), np.nan)
    mask = np.zeros((len(times), m), dtype=bool)
    for t, j, rng, line in rows:
        k = step[t]
        if mask[k, j]:
            raise DatasetFormatError(f"{path}:{line}: duplicate reading for anchor {ids[j]!r} at t={t}")
        values[k, j] = rng
        mask[k, j] = True

    anchor_positions = np.array(positions, dtype=float).reshape(-1, 3)
    sensors = uwb_sensors(anchor_positions, ids, noise_variance, tag_z)
    data = MeasurementSet(values, mask, sensors, times)

    truth = truth_times = None
    if truth_path.exists():
        tt, xy = [], []
        for line, (t, x, y) in _read_rows(truth_path, TRUTH_HEADER):
            tt.append(_number(t, truth_path, line))
            xy.append([_number(x, truth_path, line), _number(y, truth_path, line)])
        truth_times = np.array(tt, dtype=float)
        truth = np.array(xy, dtype=float).reshape(-1, 2)
    return UwbDataset(data, ids, anchor_positions, truth, truth_times)


def write_uwb_csv(directory, dataset: UwbDataset) -> Path:
    """Write ``dataset`` in the interchange format; returns the directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data = dataset.measurements
    with open(directory / "anchors.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANCHOR_HEADER)
        for aid, (x, y, z) in zip(dataset.anchor_ids, dataset.anchor_positions):
            w.writerow([aid, repr(float(x)), repr(float(y)), repr(float(z))])
    with open(directory / "measurements.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MEASUREMENT_HEADER)
        for k, t in enumerate(data.times):
            for j in np.flatnonzero(data.mask[k]):
                w.writerow([repr(float(t)), dataset.anchor_ids[j], repr(float(data.values[k, j]))])
    if dataset.truth is not None:
        times = dataset.truth_times if dataset.truth_times is not None else data.times
        with open(directory / "truth.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRUTH_HEADER)
            for t, (x, y) in zip(times, dataset.truth):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(y))])
    return directory


ROOM = (20.0, 12.0)


def _reflect(x, lo, hi):
    """Fold ``x`` back into ``[lo, hi]`` as if bouncing off the walls."""
    span = hi - lo
    y = np.mod(x - lo, 2.0 * span)
    return lo + np.where(y > span, 2.0 * span - y, y)


def default_anchor_layout(n_anchors: int = 11, width: float = ROOM[0], depth: float = ROOM[1],
                          height: float = 2.0) -> np.ndarray:
    """Anchors spread around the perimeter of a ``width x depth`` room."""
    perimeter = 2 * (width + depth)
    s = (np.arange(n_anchors) + 0.5) * perimeter / n_anchors
    xy = np.empty((n_anchors, 2))
    for i, d in enumerate(s):
        if d < width:
            xy[i] = (d, 0.0)
        elif d < width + depth:
            xy[i] = (width, d - width)
        elif d < 2 * width + depth:
            xy[i] = (2 * width + depth - d, depth)
        else:
            xy[i] = (0.0, perimeter - d)
    return np.column_stack([xy, np.full(n_anchors, height)])


def simulate_uwb_scenario(T: int = 200, n_anchors: int = 11, max_visible: int = 4, nlos_prob: float = 0.2,
                          nlos_bias: tuple[float, float] = (1.0, 5.0), q: float = 0.1, r: float = 0.1,
                          drop_prob: float = 0.1, start=(10.0, 6.0), margin: float = 1.0, seed=None):
    """Synthetic range-only walk through an anchor network.

    The walk stays inside the anchored room, reflected ``margin`` metres
    short of the walls.
    At each step only the ``max_visible`` nearest anchors may report, each
    dropping out with ``drop_prob``. Reported ranges get a positive NLoS
    bias drawn from ``uniform(*nlos_bias)`` with probability ``nlos_prob``.
    Returns ``(UwbDataset, OutlierGroundTruth, states)`` where ``states`` is
    the ``(T + 1, 2)`` true path including the start.
    """
    rng = np.random.default_rng(seed)
    anchors = default_anchor_layout(n_anchors)
    ids = [f"A{i:02d}" for i in range(n_anchors)]
    sensors = uwb_sensors(anchors, ids, noise_variance=r)
    states = np.empty((T + 1, 2))
    states[0] = start
    steps = rng.standard_normal((T, 2)) * np.sqrt(q)
    lo = np.array([margin, margin])
    hi = np.array(ROOM) - margin
    for k in range(1, T + 1):
        states[k] = _reflect(states[k - 1] + steps[k - 1], lo, hi)
    truth = states[1:]
    h = sensors.measure(truth)
    order = np.argsort(h, axis=1)[:, :max_visible]
    mask = np.zeros((T, n_anchors), dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    mask &= rng.random((T, n_anchors)) >= drop_prob
    noise = rng.standard_normal((T, n_anchors)) * np.sqrt(r)
    flags = mask & (rng.random((T, n_anchors)) < nlos_prob)
    bias = np.where(flags, rng.uniform(*nlos_bias, size=(T, n_anchors)), 0.0)
    clean = np.where(mask, h + noise, np.nan)
    values = clean + bias
    data = MeasurementSet(values, mask, sensors, np.arange(1, T + 1, dtype=float))
    dataset = UwbDataset(data, ids, anchors, truth, data.times.copy())
    return dataset, OutlierGroundTruth(flags, bias, clean), states
