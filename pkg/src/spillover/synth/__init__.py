"""Synthetic ground-truth generators."""

from spillover.synth.merit_order import MeritOrderConfig, SyntheticMarket, generate_hourly
from spillover.synth.panel_dgp import REFERENCE_COEFFICIENTS, DgpConfig, DgpTruth, generate_panel

__all__ = [
    "DgpConfig",
    "DgpTruth",
    "MeritOrderConfig",
    "REFERENCE_COEFFICIENTS",
    "SyntheticMarket",
    "generate_hourly",
    "generate_panel",
]
