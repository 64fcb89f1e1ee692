"""Spatial weights over direct neighbors and the spatially lagged penetration."""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np
import pandas as pd

from spillover.errors import ConfigError
from spillover.ingest import ZoneTopology

logger = logging.getLogger(__name__)

SCHEMES = ("ic_weighted", "binary_uniform")


@dataclass(frozen=True)
class SpatialWeights:
    focal: str
    weights: Mapping[str, float]
    scheme: str

    @property
    def defined(self) -> bool:
        return bool(self.weights)


def build_weights(
    topology: ZoneTopology,
    interconnectors: pd.DataFrame | None = None,
    scheme: str = "ic_weighted",
) -> dict[str, SpatialWeights]:
    """Row-normalized weights per focal zone.

    ``ic_weighted`` uses directed capacities ``interconnectors`` (columns
    from_zone, to_zone, ic_mw): w_ij = IC_ij / sum_j IC_ij.  ``binary_uniform``
    gives each of the J direct neighbors 1/J.  A zone without neighbors (or
    with zero total capacity under ``ic_weighted``) gets empty weights.
    """
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown weights scheme {scheme!r}; expected one of {SCHEMES}")
    if not topology.zones:
        raise ConfigError("empty topology")
    if scheme == "ic_weighted":
        if interconnectors is None:
            raise ConfigError("ic_weighted scheme needs interconnector capacities")
        ic = {(a, b): float(v) for a, b, v in interconnectors[["from_zone", "to_zone", "ic_mw"]].itertuples(index=False)}

    out = {}
    for zone in topology.zones:
        neighbors = topology.neighbors_of(zone)
        weights: dict[str, float] = {}
        if neighbors and scheme == "binary_uniform":
            weights = {n: 1.0 / len(neighbors) for n in neighbors}
        elif neighbors:
            caps = np.array([max(ic.get((zone, n), 0.0), 0.0) for n in neighbors])
            total = caps.sum()
            if total > 0:
                weights = {n: float(c / total) for n, c in zip(neighbors, caps)}
        if not weights:
            logger.warning("zone %s has no usable neighbors under %s; spatial lag undefined", zone, scheme)
        out[zone] = SpatialWeights(zone, weights, scheme)
    return out


def spatial_lag(weights: Mapping[str, SpatialWeights], penetration: pd.Series) -> pd.Series:
    """Neighboring penetration sum_j w_ij * P_j per (focal zone, period).

    ``penetration`` is indexed by (zone, period).  A focal zone-period is NaN
    when any positively weighted neighbor lacks a value in that period.
    """
    wide = penetration.unstack(level=0)
    values = wide.to_numpy(dtype=float)
    col = {z: k for k, z in enumerate(wide.columns)}
    pieces = []
    for focal in sorted(weights):
        sw = weights[focal]
        if not sw.defined:
            continue
        lag = np.zeros(len(wide))
        missing = np.zeros(len(wide), dtype=bool)
        for neighbor, w in sorted(sw.weights.items()):
            if w <= 0:
                continue
            if neighbor not in col:
                missing[:] = True
                continue
            v = values[:, col[neighbor]]
            missing |= np.isnan(v)
            lag += w * np.nan_to_num(v)
        lag[missing] = np.nan
        pieces.append(pd.Series(lag, index=pd.MultiIndex.from_product([[focal], wide.index], names=["zone", "period"])))
    if not pieces:
        return pd.Series(dtype=float, index=pd.MultiIndex.from_arrays([[], []], names=["zone", "period"]))
    return pd.concat(pieces).rename("neighbor_penetration")


def weights_edgelist(weights: Mapping[str, SpatialWeights]) -> pd.DataFrame:
    rows = [
        (focal, neighbor, w, sw.scheme)
        for focal, sw in sorted(weights.items())
        for neighbor, w in sorted(sw.weights.items())
    ]
    return pd.DataFrame(rows, columns=["focal", "neighbor", "weight", "scheme"])
