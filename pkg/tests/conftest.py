import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from robust_rts.models import LinearSensors, linear_model  # noqa: E402
from robust_rts.simulate import MeasurementSet  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_linear_problem(rng, T=50, n=2, m=1, q=0.05, r=0.3):
    """Random stable linear-Gaussian SSM with simulated data."""
    F = np.eye(n) + 0.1 * rng.standard_normal((n, n))
    F /= max(1.0, np.max(np.abs(np.linalg.eigvals(F))) / 0.98)
    Q = q * np.eye(n)
    H = rng.standard_normal((m, n))
    R = np.full(m, r)
    x = rng.standard_normal(n)
    Y = np.empty((T, m))
    for k in range(T):
        x = F @ x + rng.multivariate_normal(np.zeros(n), Q)
        Y[k] = H @ x + rng.standard_normal(m) * np.sqrt(R)
    model = linear_model(F, Q)
    sensors = LinearSensors(H, R)
    data = MeasurementSet(Y, np.ones((T, m), dtype=bool), sensors)
    return model, sensors, data, F, Q, H, np.diag(R)
