"""Arrival-time prediction for fixed-route autonomous shuttles.

The pipeline turns raw GPS traces into dwell and running events
(:mod:`shuttle_eta.preprocess`), encodes them as feature rows
(:mod:`shuttle_eta.features`), trains per-segment predictors
(:mod:`shuttle_eta.models`) and composes them into journey arrival times
(:mod:`shuttle_eta.journey`). :mod:`shuttle_eta.synth` generates pilot sites
with exact ground truth and :mod:`shuttle_eta.evaluation` scores everything.
"""

from .core import (
    ConfigError,
    DwellEvent,
    GpsFix,
    Route,
    RunEvent,
    Segment,
    ShuttleEtaError,
    Stop,
    WeatherRecord,
)
from .kernels import backend_name

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DwellEvent",
    "GpsFix",
    "Route",
    "RunEvent",
    "Segment",
    "ShuttleEtaError",
    "Stop",
    "WeatherRecord",
    "__version__",
    "backend_name",
]
