"""Simulation, maximum-likelihood fitting and hypothesis testing for
multidimensional marked exponential Hawkes processes."""
from .core import (
    HawkesParams,
    MarkedEvent,
    ModelSpec,
    Realization,
    compensator,
    compensator_linear,
    compensator_nonlinear,
    compensator_path,
    event_left_right_limits,
    identifiability_check,
    intensity_at,
    mark_link_eval,
    restart_time,
    stationarity_check,
    time_change,
)
from .errors import HawkesError

__version__ = "0.1.0"

__all__ = [
    "HawkesError",
    "HawkesParams",
    "MarkedEvent",
    "ModelSpec",
    "Realization",
    "compensator",
    "compensator_linear",
    "compensator_nonlinear",
    "compensator_path",
    "event_left_right_limits",
    "identifiability_check",
    "intensity_at",
    "mark_link_eval",
    "restart_time",
    "stationarity_check",
    "time_change",
    "__version__",
]
