"""Dynamic and measurement models.

Transition functions are vectorised over leading axes: they accept an
``(..., n)`` array of states and return an array of the same shape, so a
whole sigma-point set can be propagated in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

RANGE = "range"
BEARING = "bearing"

_SMALL_TURN = 1e-9


def wrap_angle(x):
    """Map angles into the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=float), 2.0 * np.pi)


@dataclass
class DynamicsModel:
    """Additive-noise dynamics ``x_k = f(x_{k-1}) + q_{k-1}``."""

    state_dim: int
    transition: Callable[[np.ndarray], np.ndarray]
    process_noise: np.ndarray
    dt: float = 1.0
    position_index: tuple[int, int] = (0, 1)
    name: str = "custom"

    def __post_init__(self):
        Q = np.asarray(self.process_noise, dtype=float)
        if Q.shape != (self.state_dim, self.state_dim):
            raise ValueError(f"process_noise must be {self.state_dim}x{self.state_dim}, got {Q.shape}")
        if not np.allclose(Q, Q.T, atol=1e-12):
            raise ValueError("process_noise must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-12 * max(1.0, np.trace(Q)):
            raise ValueError("process_noise must be positive semi-definite")
        self.process_noise = Q


def ct_transition(state, dt: float = 1.0) -> np.ndarray:
    """Coordinated-turn transition for states ``[a, a_dot, b, b_dot, omega]``.

    The turn rate is carried over unchanged. For ``|omega * dt| < 1e-9`` the
    ``sin(w dt)/w`` and ``(1 - cos(w dt))/w`` terms are replaced by their
    series limits, so ``omega = 0`` reduces to constant velocity.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(state, dtype=float)
    a, ad, b, bd, w = (x[..., i] for i in range(5))
    wdt = w * dt
    small = np.abs(wdt) < _SMALL_TURN
    w_safe = np.where(small, 1.0, w)
    s, c = np.sin(wdt), np.cos(wdt)
    s_over_w = np.where(small, dt * (1.0 - wdt**2 / 6.0), s / w_safe)
    one_minus_c_over_w = np.where(small, 0.5 * wdt * dt, (1.0 - c) / w_safe)

    out = np.empty_like(x)
    out[..., 0] = a + s_over_w * ad - one_minus_c_over_w * bd
    out[..., 1] = c * ad - s * bd
    out[..., 2] = one_minus_c_over_w * ad + b + s_over_w * bd
    out[..., 3] = s * ad + c * bd
    out[..., 4] = w
    return out


def ct_process_noise(dt: float, eta1: float, eta2: float) -> np.ndarray:
    """Block-diagonal process noise ``diag(eta1*M, eta1*M, eta2)``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if eta1 < 0 or eta2 < 0:
        raise ValueError("eta1 and eta2 must be non-negative")
    M = np.array([[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]])
    Q = np.zeros((5, 5))
    Q[0:2, 0:2] = eta1 * M
    Q[2:4, 2:4] = eta1 * M
    Q[4, 4] = eta2
    return Q


def coordinated_turn_model(dt: float = 1.0, eta1: float = 0.1, eta2: float = 1.75e-4) -> DynamicsModel:
    return DynamicsModel(
        state_dim=5,
        transition=lambda x: ct_transition(x, dt),
        process_noise=ct_process_noise(dt, eta1, eta2),
        dt=dt,
        position_index=(0, 2),
        name="coordinated-turn",
    )


def rw_transition(state) -> np.ndarray:
    """Random-walk transition: the identity map."""
    return np.array(state, dtype=float, copy=True)


def random_walk_model(q: float = 0.1, dim: int = 2, dt: float = 1.0) -> DynamicsModel:
    return DynamicsModel(
        state_dim=dim,
        transition=rw_transition,
        process_noise=q * np.eye(dim),
        dt=dt,
        position_index=(0, 1),
        name="random-walk",
    )


def linear_model(F, Q, position_index: tuple[int, int] = (0, 1)) -> DynamicsModel:
    F = np.asarray(F, dtype=float)
    return DynamicsModel(
        state_dim=F.shape[0],
        transition=lambda x: np.asarray(x, dtype=float) @ F.T,
        process_noise=np.asarray(Q, dtype=float),
        position_index=position_index,
        name="linear",
    )


def range_measure(state_xy, sensor_xy, z_offset: float = 0.0) -> float:
    """Euclidean distance, with an optional fixed height difference."""
    dx = state_xy[0] - sensor_xy[0]
    dy = state_xy[1] - sensor_xy[1]
    return float(np.sqrt(dx * dx + dy * dy + z_offset * z_offset))


def bearing_measure(state_xy, sensor_xy) -> float:
    """Four-quadrant bearing from the sensor to the target in (-pi, pi]."""
    dx = state_xy[0] - sensor_xy[0]
    dy = state_xy[1] - sensor_xy[1]
    if dx == 0 and dy == 0:
        raise ValueError("bearing undefined: target coincides with sensor")
    return float(wrap_angle(np.arctan2(dy, dx)))


@dataclass
class SensorSuite:
    """Independent range and bearing sensors observing a planar position.

    ``measure`` maps ``(..., n)`` states to ``(..., m)`` predicted readings.
    """

    kinds: np.ndarray
    positions: np.ndarray
    noise_variance: np.ndarray
    z_offset: np.ndarray | None = None
    position_index: tuple[int, int] = (0, 2)
    ids: list = field(default_factory=list)

    def __post_init__(self):
        self.kinds = np.asarray(self.kinds, dtype=object)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        self.noise_variance = np.asarray(self.noise_variance, dtype=float).reshape(-1)
        m = len(self.kinds)
        if self.positions.shape[0] != m or self.noise_variance.shape[0] != m:
            raise ValueError("kinds, positions and noise_variance must have one entry per sensor")
        bad = set(self.kinds) - {RANGE, BEARING}
        if bad:
            raise ValueError(f"unknown sensor kind(s): {sorted(bad)}")
        if np.any(self.noise_variance <= 0):
            raise ValueError("noise variances must be positive")
        if self.z_offset is None:
            self.z_offset = np.zeros(m)
        self.z_offset = np.asarray(self.z_offset, dtype=float).reshape(-1)
        if not self.ids:
            self.ids = list(range(m))
        self.angular = self.kinds == BEARING
        self._is_range = ~self.angular

    @property
    def size(self) -> int:
        return len(self.kinds)

    def __len__(self):
        return self.size

    def measure(self, states) -> np.ndarray:
        x = np.asarray(states, dtype=float)
        ia, ib = self.position_index
        dx = x[..., ia, None] - self.positions[:, 0]
        dy = x[..., ib, None] - self.positions[:, 1]
        rng = np.sqrt(dx * dx + dy * dy + self.z_offset**2)
        brg = np.arctan2(dy, dx)
        return np.where(self._is_range, rng, brg)

    def subset(self, index: Sequence[int]) -> "SensorSuite":
        index = np.asarray(index)
        return SensorSuite(
            kinds=self.kinds[index],
            positions=self.positions[index],
            noise_variance=self.noise_variance[index],
            z_offset=self.z_offset[index],
            position_index=self.position_index,
            ids=[self.ids[i] for i in index],
        )


@dataclass
class LinearSensors:
    """Linear measurement model ``y = H x + r`` with diagonal noise."""

    H: np.ndarray
    noise_variance: np.ndarray

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.noise_variance = np.asarray(self.noise_variance, dtype=float).reshape(-1)
        if self.H.shape[0] != self.noise_variance.shape[0]:
            raise ValueError("H rows must match noise_variance length")
        if np.any(self.noise_variance <= 0):
            raise ValueError("noise variances must be positive")
        self.angular = np.zeros(self.H.shape[0], dtype=bool)

    @property
    def size(self) -> int:
        return self.H.shape[0]

    def __len__(self):
        return self.size

    def measure(self, states) -> np.ndarray:
        return np.asarray(states, dtype=float) @ self.H.T
