"""Within/between panel design with grand-mean centering and interactions.

Every within-type column (within transforms, double-demeaned lower-level
interactions and cross-level interactions) has zero mean inside each entity,
so it is exactly orthogonal to every entity-constant column.  That is what
makes the between-within fit and the entity fixed-effects fit agree on the
within-type coefficients.
"""

from __future__ import annotations

import logging
import warnings
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd
from scipy import linalg

from spillover.errors import DataError, RankDeficientError
from spillover.metrics import TECHNOLOGIES, MetricsTables
from spillover.spatial import SpatialWeights, build_weights, spatial_lag

if TYPE_CHECKING:
    from spillover.estimate import ModelSpec

logger = logging.getLogger(__name__)

CONTROLS = ("hydro_pumped", "hydro_reservoir", "gas_coal_ratio", "load_corr", "cov")
# Common to all zones: within column and lower-level interaction only.
WITHIN_ONLY = frozenset({"gas_coal_ratio"})
KINDS = ("within", "between", "time_invariant", "interaction", "intercept")
WITHIN_TYPE = frozenset({"within", "interaction"})

LABELS = {
    "hydro_pumped": "Hydro pumped storage capacity",
    "hydro_reservoir": "Hydro reservoir capacity",
    "gas_coal_ratio": "Clean gas-coal price ratio",
    "interconnector": "Interconnector capacity",
    "intercept": "Intercept",
}


def other_technology(technology: str) -> str:
    if technology not in TECHNOLOGIES:
        raise ValueError(f"unknown technology {technology!r}")
    return "solar" if technology == "wind" else "wind"


def control_name(control: str, technology: str) -> str:
    return f"{technology}_{control}" if control in ("load_corr", "cov") else control


def label(column: str) -> str:
    """Human-readable label in the style of a regression table."""
    if ":" in column:
        left, right = column.split(":")
        return f"{label(left)}*{label(right)}"
    suffix = ""
    if column.endswith("_mean"):
        column, suffix = column[: -len("_mean")], " (zone average)"
    if column in LABELS:
        return LABELS[column] + suffix
    head, _, tail = column.partition("_")
    if head in ("domestic", "neighboring"):
        return f"{head.capitalize()} {tail}{suffix}"
    if tail == "load_corr":
        return f"{head.capitalize()}-load correlation{suffix}"
    if tail == "cov":
        return f"{head.capitalize()} coefficient of variation{suffix}"
    return column + suffix


# --------------------------------------------------------------------------- #
# Transforms
# --------------------------------------------------------------------------- #


def _codes(entities) -> tuple[np.ndarray, np.ndarray]:
    codes, uniques = pd.factorize(np.asarray(entities), sort=True)
    return codes, np.bincount(codes)


def entity_means(x, entities) -> np.ndarray:
    """Per-row mean of ``x`` over the row's entity (realized periods only)."""
    x = np.asarray(x, dtype=float)
    codes, counts = _codes(entities)
    sums = np.bincount(codes, weights=x, minlength=len(counts))
    return (sums / counts)[codes]


def within_between(x, entities) -> tuple[np.ndarray, np.ndarray]:
    """Split ``x`` into entity-demeaned and entity-mean parts (per row)."""
    codes, counts = _codes(entities)
    if (counts < 2).any():
        warnings.warn(f"{int((counts < 2).sum())} single-period entities; within component is zero there", stacklevel=2)
    between = entity_means(x, entities)
    return np.asarray(x, dtype=float) - between, between


def lower_level_interaction(x, z, entities) -> np.ndarray:
    """Demean both variables within entity, multiply, demean the product again."""
    xw, _ = within_between(x, entities)
    zw, _ = within_between(z, entities)
    w = xw * zw
    return w - entity_means(w, entities)


def cross_level_interaction(x_within, m_centered) -> np.ndarray:
    return np.asarray(x_within, dtype=float) * np.asarray(m_centered, dtype=float)


def grand_mean_center(values) -> tuple[np.ndarray, float]:
    values = np.asarray(values, dtype=float)
    center = float(values.mean())
    return values - center, center


# --------------------------------------------------------------------------- #
# Design matrix
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class DesignMatrix:
    """Regression design with column metadata.

    ``centers`` holds the grand mean removed from each between and
    time-invariant column, keyed by column name; ``levels`` marks each
    interaction column as ``lower`` or ``cross``.
    """

    columns: tuple[str, ...]
    kinds: Mapping[str, str]
    X: np.ndarray = field(repr=False)
    zones: np.ndarray = field(repr=False)
    periods: np.ndarray = field(repr=False)
    centers: Mapping[str, float] = field(default_factory=dict)
    levels: Mapping[str, str] = field(default_factory=dict)
    dropped: tuple[str, ...] = ()

    @property
    def n_obs(self) -> int:
        return self.X.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.columns.index(name)]

    def frame(self) -> pd.DataFrame:
        out = pd.DataFrame(self.X, columns=list(self.columns))
        out.insert(0, "period", self.periods)
        out.insert(0, "zone", self.zones)
        return out

    def to_csv(self, path: str | Path, y: np.ndarray | None = None) -> None:
        frame = self.frame()
        if y is not None:
            frame.insert(2, "y", y)
        frame.to_csv(path, index=False, lineterminator="\n")

    def subset(self, kinds: Iterable[str]) -> DesignMatrix:
        kinds = set(kinds)
        keep = [k for k, c in enumerate(self.columns) if self.kinds[c] in kinds]
        cols = tuple(self.columns[k] for k in keep)
        return DesignMatrix(
            columns=cols,
            kinds={c: self.kinds[c] for c in cols},
            X=self.X[:, keep],
            zones=self.zones,
            periods=self.periods,
            centers={c: v for c, v in self.centers.items() if c in cols},
            levels={c: v for c, v in self.levels.items() if c in cols},
            dropped=self.dropped,
        )


def panel_frame(
    spec: ModelSpec,
    tables: MetricsTables,
    weights: Mapping[str, SpatialWeights] | None = None,
    exclude_zones: Iterable[str] = (),
) -> pd.DataFrame:
    """Wide complete-case frame of raw variables for one technology model.

    Columns: zone, period, y, dom, nbr, dom_x, nbr_x, the requested controls
    and ic.  Excluded zones are removed after the spatial lags are formed,
    so they still count as neighbors of the remaining zones.
    """
    tech = spec.technology
    other = other_technology(tech)
    m = tables.metrics
    own = m[m["technology"] == tech].set_index(["zone", "period"])
    if own.empty:
        raise DataError(f"no {tech} metrics")

    avg_pen = own["penetration"].groupby(level="zone").mean()
    included = avg_pen.index[avg_pen >= spec.thresholds.min_average_penetration]
    for zone in avg_pen.index.difference(included):
        logger.info("%s model: zone %s below average penetration threshold", tech, zone)

    frame = pd.DataFrame({"y": own["vf"], "dom": own["penetration"]})
    frame = frame[frame.index.get_level_values("zone").isin(included)]
    if spec.neighbors:
        if weights is None:
            weights = build_weights(tables.topology, tables.interconnectors, spec.weights)
        frame["nbr"] = spatial_lag(weights, own["penetration"]).reindex(frame.index)
    if spec.cross_technology:
        cross = m[m["technology"] == other].set_index(["zone", "period"])["penetration"]
        frame["dom_x"] = cross.reindex(frame.index)
        if spec.neighbors:
            frame["nbr_x"] = spatial_lag(weights, cross).reindex(frame.index)
    controls = tables.controls.set_index(["zone", "period"])
    for control in spec.controls:
        if control not in CONTROLS:
            raise DataError(f"unknown control {control!r}")
        if control in ("load_corr", "cov"):
            frame[control] = own[control].reindex(frame.index)
        else:
            frame[control] = controls[control].reindex(frame.index)
    if spec.interconnector:
        ic = tables.zone_ic.set_index("zone")["ic_normalized"]
        frame["ic"] = ic.reindex(frame.index.get_level_values("zone")).to_numpy()

    frame = frame.reset_index()
    drop = set(exclude_zones)
    if drop:
        frame = frame[~frame["zone"].isin(drop)]
    complete = frame.notna().all(axis=1)
    if (~complete).any():
        logger.info("%s model: %d incomplete zone-periods dropped", tech, int((~complete).sum()))
    frame = frame[complete].sort_values(["zone", "period"], kind="mergesort").reset_index(drop=True)
    return frame


def _negligible(values: np.ndarray, raw: np.ndarray) -> bool:
    scale = max(1.0, float(np.max(np.abs(raw))) if raw.size else 1.0)
    return values.size == 0 or float(np.max(np.abs(values))) <= 1e-10 * scale


def build_design(frame: pd.DataFrame, spec: ModelSpec) -> tuple[DesignMatrix, np.ndarray]:
    """Turn a :func:`panel_frame` into the design matrix and dependent vector."""
    if frame.empty:
        raise DataError("no complete observations for the requested model")
    tech = spec.technology
    other = other_technology(tech)
    ent = frame["zone"].to_numpy()
    _, counts = _codes(ent)
    if (counts < 2).any():
        warnings.warn(f"{int((counts < 2).sum())} single-period entities; within component is zero there", stacklevel=2)
    cols: list[tuple[str, str, np.ndarray]] = []
    centers: dict[str, float] = {}
    levels: dict[str, str] = {}
    dropped: list[str] = []
    within: dict[str, np.ndarray] = {}
    between: dict[str, np.ndarray] = {}

    def add_within_between(raw_key: str, name: str, with_between: bool = True) -> None:
        raw = frame[raw_key].to_numpy(dtype=float)
        b = entity_means(raw, ent)
        w = raw - b
        if _negligible(w, raw):
            warnings.warn(f"{name}: no within-entity variation; within column dropped", stacklevel=3)
            dropped.append(name)
        else:
            within[name] = w
            cols.append((name, "within", w))
        if not with_between:
            return
        bc, center = grand_mean_center(b)
        if _negligible(bc, raw):
            warnings.warn(f"{name}: no between-entity variation; zone-average column dropped", stacklevel=3)
            dropped.append(f"{name}_mean")
        else:
            between[name] = bc
            centers[f"{name}_mean"] = center
            cols.append((f"{name}_mean", "between", bc))

    dom, nbr = f"domestic_{tech}", f"neighboring_{tech}"
    add_within_between("dom", dom)
    if spec.neighbors:
        add_within_between("nbr", nbr)
    if spec.cross_technology:
        add_within_between("dom_x", f"domestic_{other}")
        if spec.neighbors:
            add_within_between("nbr_x", f"neighboring_{other}")
    control_names = []
    for control in CONTROLS:
        if control not in spec.controls:
            continue
        name = control_name(control, tech)
        control_names.append(name)
        add_within_between(control, name, with_between=control not in WITHIN_ONLY)
    ic_centered = None
    if spec.interconnector:
        raw = frame["ic"].to_numpy(dtype=float)
        ic_centered, center = grand_mean_center(raw)
        if _negligible(ic_centered, raw):
            warnings.warn("interconnector: no between-entity variation; column dropped", stacklevel=2)
            dropped.append("interconnector")
            ic_centered = None
        else:
            centers["interconnector"] = center
            cols.append(("interconnector", "time_invariant", ic_centered))

    if dom not in within:
        raise RankDeficientError(f"{dom} has no within variation", [dom])
    x_dom = within[dom]
    for name in control_names:
        if name in within:
            inter = f"{dom}:{name}"
            w = x_dom * within[name]
            cols.append((inter, "interaction", w - entity_means(w, ent)))
            levels[inter] = "lower"
    for name in control_names:
        if name in between:
            inter = f"{dom}:{name}_mean"
            cols.append((inter, "interaction", cross_level_interaction(x_dom, between[name])))
            levels[inter] = "cross"
    if ic_centered is not None:
        inter = f"{dom}:interconnector"
        cols.append((inter, "interaction", cross_level_interaction(x_dom, ic_centered)))
        levels[inter] = "cross"
        if spec.neighbors and nbr in within:
            inter = f"{nbr}:interconnector"
            cols.append((inter, "interaction", cross_level_interaction(within[nbr], ic_centered)))
            levels[inter] = "cross"
    cols.append(("intercept", "intercept", np.ones(len(frame))))

    names = tuple(c[0] for c in cols)
    X = np.column_stack([c[2] for c in cols])
    design = DesignMatrix(
        columns=names,
        kinds={c[0]: c[1] for c in cols},
        X=X,
        zones=ent,
        periods=frame["period"].to_numpy(),
        centers=centers,
        levels=levels,
        dropped=tuple(dropped),
    )
    check_rank(design)
    return design, frame["y"].to_numpy(dtype=float)


def check_rank(design: DesignMatrix, rtol: float | None = None) -> int:
    """Raise :class:`RankDeficientError` naming collinear columns."""
    X = design.X
    n, k = X.shape
    if n <= k:
        raise RankDeficientError(f"{n} observations for {k} columns", list(design.columns))
    norms = np.linalg.norm(X, axis=0)
    zero = [design.columns[j] for j in np.flatnonzero(norms == 0)]
    if zero:
        raise RankDeficientError(f"all-zero column(s): {zero}", zero)
    _, r, piv = linalg.qr(X / norms, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = rtol if rtol is not None else max(n, k) * np.finfo(float).eps
    rank = int((diag > tol * diag[0]).sum())
    if rank < k:
        bad = [design.columns[j] for j in piv[rank:]]
        raise RankDeficientError(f"design is rank deficient (rank {rank} < {k}); collinear: {bad}", bad)
    return rank


def assemble_design(
    spec: ModelSpec,
    tables: MetricsTables,
    weights: Mapping[str, SpatialWeights] | None = None,
    exclude_zones: Iterable[str] = (),
) -> tuple[DesignMatrix, np.ndarray]:
    """Design matrix and dependent vector for ``spec`` on ``tables``.

    Column order: own-technology penetration, cross-technology penetration,
    controls (within then zone average), interconnector, lower-level then
    cross-level interactions, intercept.
    """
    frame = panel_frame(spec, tables, weights, exclude_zones)
    return build_design(frame, spec)
