"""Domestic and cross-border cannibalization of wind and solar market value.

Pipeline: hourly zonal data -> zone-period metrics -> spatial lags ->
within/between panel design -> least squares with Newey-West errors ->
conditional effects and sensitivity sweeps.
"""

from spillover.errors import ConfigError, DataError, NumericalError, RankDeficientError
from spillover.estimate import ModelResult, ModelSpec, fit
from spillover.ingest import HourlyStore, ZoneTopology, load_dataset, load_topology
from spillover.metrics import MetricsTables, Thresholds, build_tables

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "HourlyStore",
    "MetricsTables",
    "ModelResult",
    "ModelSpec",
    "NumericalError",
    "RankDeficientError",
    "Thresholds",
    "ZoneTopology",
    "build_tables",
    "fit",
    "load_dataset",
    "load_topology",
]
