"""Extended object tracking with trajectory PMB filters and particle BP."""

__version__ = "0.1.0"

from .filters import FilterOptions, TpmbFilter, TrajectoryEstimate
from .linalg import RngStream
from .metrics import MetricParams, TrajectoryRecord, lp_metric
from .models import ModelParams, ObjectState
from .scenario import ScenarioConfig, generate_measurements, generate_scenario

__all__ = [
    "FilterOptions",
    "MetricParams",
    "ModelParams",
    "ObjectState",
    "RngStream",
    "ScenarioConfig",
    "TpmbFilter",
    "TrajectoryEstimate",
    "TrajectoryRecord",
    "__version__",
    "generate_measurements",
    "generate_scenario",
    "lp_metric",
]
