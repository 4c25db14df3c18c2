"""Outlier-robust unscented RTS smoothing with per-sensor VB outlier rejection."""

from .bench import RunResult, emit_reports, rmse, run_monte_carlo, timing_sweep
from .config import ConfigError, ScenarioConfig, load_config
from .diagnostics import PifReport, gaussian_kl, pif, pif_sweep
from .linalg import nearest_pd
from .models import (
    DynamicsModel,
    LinearSensors,
    SensorSuite,
    coordinated_turn_model,
    linear_model,
    random_walk_model,
)
from .simulate import (
    MeasurementSet,
    OutlierGroundTruth,
    build_sensor_grid,
    load_uwb_csv,
    simulate_measurements,
    simulate_trajectory,
    write_uwb_csv,
)
from .smoother import SmootherTrace, backward_pass
from .unscented import GaussianBelief, SmootherDivergence, forward_pass, serial_update, sigma_points
from .vb import METHODS, VbHyperparams, run_asor, run_ideal, run_method, run_plain, run_ror, run_sor

__version__ = "0.1.0"
