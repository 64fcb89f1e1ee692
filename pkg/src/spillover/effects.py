"""Conditional (moderated) marginal effects with delta-method intervals."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from spillover.errors import DataError
from spillover.estimate import ModelResult
from spillover.panel import control_name

logger = logging.getLogger(__name__)

Z95 = 1.96
CURVE_COLUMNS = ["variable", "moderator", "level", "m", "effect", "std_error", "ci_low", "ci_high"]


@dataclass(frozen=True)
class ConditionalEffect:
    variable: str
    moderator: str
    m: float
    effect: float
    std_error: float
    ci_low: float
    ci_high: float

    def to_dict(self) -> dict:
        return asdict(self)


def linear_combination(result: ModelResult, weights: Mapping[str, float]) -> tuple[float, float]:
    """Estimate and delta-method variance of sum_k a_k * beta_k."""
    names = list(weights)
    missing = [n for n in names if n not in result.params.index]
    if missing:
        raise DataError(f"coefficient(s) not in result: {missing}")
    a = np.array([weights[n] for n in names], dtype=float)
    beta = result.params[names].to_numpy()
    V = result.hac_covariance.loc[names, names].to_numpy()
    return float(a @ beta), float(a @ V @ a)


def conditional_effect(result: ModelResult, base: str, interaction: str | None, m: float) -> ConditionalEffect:
    """Effect of ``base`` when the centered moderator equals ``m``.

    effect = b_base + b_int * m, var = V_bb + m^2 V_ii + 2 m V_bi.
    """
    params, V = result.params, result.hac_covariance
    for name in (base, interaction):
        if name is not None and (name not in params.index or name not in V.index):
            raise DataError(f"coefficient or covariance entry missing for {name!r}")
    if interaction is None:
        effect = float(params[base])
        var = float(V.loc[base, base])
    else:
        effect = float(params[base]) + float(params[interaction]) * m
        var = float(V.loc[base, base]) + m * m * float(V.loc[interaction, interaction]) + 2 * m * float(V.loc[base, interaction])
    se = float(np.sqrt(max(var, 0.0)))
    moderator = interaction.split(":", 1)[1] if interaction else ""
    return ConditionalEffect(base, moderator, float(m), effect, se, effect - Z95 * se, effect + Z95 * se)


def zone_effects(result: ModelResult, ic: Mapping[str, float] | pd.Series) -> pd.DataFrame:
    """Domestic, neighboring and combined effects at each zone's interconnector capacity.

    ``ic`` maps zone -> normalized interconnector capacity (uncentered); the
    grand mean used in the fit is subtracted here.
    """
    tech = result.spec.technology
    dom, nbr = f"domestic_{tech}", f"neighboring_{tech}"
    dom_i, nbr_i = f"{dom}:interconnector", f"{nbr}:interconnector"
    center = result.design.centers.get("interconnector")
    if center is None:
        raise DataError("result has no interconnector term")
    rows = []
    for zone, value in sorted(dict(ic).items()):
        if value is None or not np.isfinite(value):
            logger.warning("zone %s has no interconnector capacity; omitted", zone)
            continue
        m = float(value) - center
        d = conditional_effect(result, dom, dom_i, m)
        n = conditional_effect(result, nbr, nbr_i, m)
        est, var = linear_combination(result, {dom: 1.0, dom_i: m, nbr: 1.0, nbr_i: m})
        se = float(np.sqrt(max(var, 0.0)))
        rows.append(
            {
                "zone": zone,
                "ic_normalized": float(value),
                "m": m,
                "domestic": d.effect,
                "domestic_se": d.std_error,
                "neighboring": n.effect,
                "neighboring_se": n.std_error,
                "combined": est,
                "combined_se": se,
                "combined_ci_low": est - Z95 * se,
                "combined_ci_high": est + Z95 * se,
            }
        )
    return pd.DataFrame(rows)


@dataclass(frozen=True)
class EffectCurve:
    variable: str
    moderator: str
    level: str
    points: tuple[ConditionalEffect, ...]
    zero_crossing: float | None

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                (self.variable, self.moderator, self.level, p.m, p.effect, p.std_error, p.ci_low, p.ci_high)
                for p in self.points
            ],
            columns=CURVE_COLUMNS,
        )


def effect_curve(result: ModelResult, base: str, interaction: str, grid: Sequence[float], level: str = "cross") -> EffectCurve:
    points = tuple(conditional_effect(result, base, interaction, float(m)) for m in grid)
    slope = float(result.params[interaction])
    crossing = None
    if slope != 0 and len(grid):
        root = -float(result.params[base]) / slope
        if min(grid) <= root <= max(grid):
            crossing = root
    return EffectCurve(base, interaction.split(":", 1)[1], level, points, crossing)


def moderator_curves(
    result: ModelResult,
    controls: Iterable[str] | None = None,
    grid: int | Mapping[str, Sequence[float]] = 41,
) -> list[EffectCurve]:
    """Effect of domestic penetration across moderator levels.

    For each control this yields a ``cross`` curve over centered zone
    averages (cross-level interaction) and, where a lower-level interaction
    exists, a ``lower`` curve over within-zone deviations.  An integer
    ``grid`` spaces that many points over the observed range; a mapping
    gives explicit grids keyed by interaction column.  The interconnector
    curves for domestic and neighboring penetration are always included.
    """
    tech = result.spec.technology
    dom = f"domestic_{tech}"
    design = result.design
    wanted = list(controls) if controls is not None else list(result.spec.controls)
    pairs: list[tuple[str, str, str, np.ndarray]] = []
    for control in wanted:
        name = control_name(control, tech)
        cross, lower = f"{dom}:{name}_mean", f"{dom}:{name}"
        if cross in result.params.index:
            pairs.append((dom, cross, "cross", design.column(f"{name}_mean")))
        if lower in result.params.index and name in design.columns:
            pairs.append((dom, lower, "lower", design.column(name)))
    for var in (dom, f"neighboring_{tech}"):
        inter = f"{var}:interconnector"
        if inter in result.params.index and "interconnector" in design.columns:
            pairs.append((var, inter, "cross", design.column("interconnector")))
    curves = []
    for base, inter, level, observed in pairs:
        if isinstance(grid, Mapping):
            if inter not in grid:
                continue
            points = np.asarray(grid[inter], dtype=float)
        else:
            points = np.linspace(float(observed.min()), float(observed.max()), int(grid))
        curves.append(effect_curve(result, base, inter, points, level))
    return curves


def curves_frame(curves: Iterable[EffectCurve]) -> pd.DataFrame:
    frames = [c.frame() for c in curves]
    if not frames:
        return pd.DataFrame(columns=CURVE_COLUMNS)
    return pd.concat(frames, ignore_index=True)
