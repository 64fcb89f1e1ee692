"""Panel data-generating process with known coefficients.

Regressors are drawn at the zone-period level, run through the same panel
assembly the estimator uses, and the value factor is set to
``X @ beta + AR(1) noise``.  The emitted tables therefore reproduce the
generator's design matrix exactly when assembled again.
"""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from spillover.errors import ConfigError
from spillover.estimate import ModelSpec
from spillover.ingest import ZoneTopology
from spillover.metrics import METRIC_COLUMNS, MetricsTables
from spillover.panel import assemble_design

# Published full-model estimates (monthly REWB, 2015-2023), used as generator truth.
REFERENCE_COEFFICIENTS: dict[str, dict[str, float]] = {
    "wind": {
        "domestic_wind": -0.622,
        "domestic_wind_mean": -0.204,
        "neighboring_wind": -0.486,
        "neighboring_wind_mean": -0.29,
        "domestic_solar": 0.047,
        "domestic_solar_mean": -0.23,
        "neighboring_solar": -0.151,
        "neighboring_solar_mean": 0.547,
        "hydro_pumped": 0.023,
        "hydro_pumped_mean": 0.039,
        "hydro_reservoir": 0.04,
        "hydro_reservoir_mean": 0.024,
        "gas_coal_ratio": -0.008,
        "wind_load_corr": 0.106,
        "wind_load_corr_mean": -0.034,
        "wind_cov": -0.204,
        "wind_cov_mean": -0.062,
        "interconnector": 0.002,
        "domestic_wind:hydro_pumped": -0.93,
        "domestic_wind:hydro_reservoir": -0.357,
        "domestic_wind:gas_coal_ratio": -0.076,
        "domestic_wind:wind_load_corr": -0.246,
        "domestic_wind:wind_cov": -1.162,
        "domestic_wind:hydro_pumped_mean": 0.545,
        "domestic_wind:hydro_reservoir_mean": 0.241,
        "domestic_wind:wind_load_corr_mean": 1.766,
        "domestic_wind:wind_cov_mean": -1.792,
        "domestic_wind:interconnector": 0.19,
        "neighboring_wind:interconnector": -0.133,
    },
    "solar": {
        "domestic_solar": -1.392,
        "domestic_solar_mean": -1.837,
        "neighboring_solar": -2.377,
        "neighboring_solar_mean": -2.256,
        "domestic_wind": -0.05,
        "domestic_wind_mean": 0.246,
        "neighboring_wind": 0.162,
        "neighboring_wind_mean": 0.175,
        "hydro_pumped": 0.222,
        "hydro_pumped_mean": 0.05,
        "hydro_reservoir": 0.028,
        "hydro_reservoir_mean": -0.015,
        "gas_coal_ratio": 0.014,
        "solar_load_corr": 0.347,
        "solar_load_corr_mean": -0.112,
        "solar_cov": 0.02,
        "solar_cov_mean": 0.097,
        "interconnector": -0.034,
        "domestic_solar:hydro_pumped": 12.533,
        "domestic_solar:hydro_reservoir": 0.755,
        "domestic_solar:gas_coal_ratio": 0.043,
        "domestic_solar:solar_load_corr": -0.467,
        "domestic_solar:solar_cov": -1.106,
        "domestic_solar:hydro_pumped_mean": -0.558,
        "domestic_solar:hydro_reservoir_mean": -0.649,
        "domestic_solar:solar_load_corr_mean": -0.436,
        "domestic_solar:solar_cov_mean": -4.051,
        "domestic_solar:interconnector": 0.412,
        "neighboring_solar:interconnector": -0.415,
    },
}


@dataclass(frozen=True)
class DgpConfig:
    """Synthetic panel settings.

    Every zone carries regressors for the whole window of ``max_periods``
    months (so spatial lags are always defined); the dependent variable is
    observed only on a contiguous sub-window of ``min_periods..max_periods``
    months, which makes the estimation panel unbalanced.

    ``ic_level_correlation`` > 0 makes directed interconnector capacity
    towards a neighbor grow with that neighbor's penetration level.
    """

    n_zones: int = 30
    min_periods: int = 76
    max_periods: int = 108
    spec: ModelSpec = field(default_factory=ModelSpec)
    coefficients: Mapping[str, float] | None = None
    intercept: float = 0.85
    rho: float = 0.5
    noise_scale: float = 0.03
    own_level: tuple[float, float] = (0.05, 0.35)
    cross_level: tuple[float, float] = (0.02, 0.12)
    within_scale: float = 0.25
    common_weight: float = 0.5
    ic_scale: float = 0.15
    ic_level_correlation: float = 0.0
    n_neighbors: int = 3
    start: str = "2015-01"
    seed: int = 0

    def __post_init__(self):
        if not abs(self.rho) < 1:
            raise ConfigError("rho must satisfy |rho| < 1")
        if self.noise_scale < 0 or self.within_scale <= 0 or self.ic_scale <= 0:
            raise ConfigError("scales must be positive")
        if not 1 <= self.min_periods <= self.max_periods:
            raise ConfigError("need 1 <= min_periods <= max_periods")
        if self.n_zones < 2:
            raise ConfigError("need at least two zones")
        if self.coefficients is not None:
            bad = [k for k, v in self.coefficients.items() if not np.isfinite(v)]
            if bad:
                raise ConfigError(f"non-finite coefficients {bad}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["spec"] = self.spec.to_dict()
        out["coefficients"] = dict(self.coefficients) if self.coefficients is not None else None
        return out


@dataclass(frozen=True)
class DgpTruth:
    coefficients: dict[str, float]
    columns: tuple[str, ...]
    config: dict
    n_obs: int

    def to_json(self) -> str:
        return json.dumps(
            {"coefficients": self.coefficients, "columns": list(self.columns), "n_obs": self.n_obs, "config": self.config},
            indent=2,
        ) + "\n"


def _ar1(rng: np.random.Generator, shape: tuple[int, int], rho: float) -> np.ndarray:
    """Stationary unit-variance AR(1) along axis 1."""
    shocks = rng.standard_normal(shape)
    out = np.empty(shape)
    out[:, 0] = shocks[:, 0]
    scale = np.sqrt(1 - rho**2)
    for t in range(1, shape[1]):
        out[:, t] = rho * out[:, t - 1] + scale * shocks[:, t]
    return out


def _nearest_neighbor_pairs(points: np.ndarray, k: int) -> set[frozenset[int]]:
    d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)
    np.fill_diagonal(d, np.inf)
    pairs = set()
    for i in range(len(points)):
        for j in np.argsort(d[i], kind="stable")[: min(k, len(points) - 1)]:
            pairs.add(frozenset((i, int(j))))
    return pairs


def _penetration(rng, levels: np.ndarray, T: int, within_scale: float, common_weight: float) -> np.ndarray:
    n = len(levels)
    growth = rng.uniform(0.0, 0.6, size=n)
    phase = rng.uniform(0, 12, size=n)
    t = np.arange(T)
    seasonal = 0.3 * np.sin(2 * np.pi * (t[None, :] + phase[:, None]) / 12)
    common = _ar1(rng, (1, T), 0.5)
    idio = _ar1(rng, (n, T), 0.5)
    shock = within_scale * (np.sqrt(common_weight) * common + np.sqrt(1 - common_weight) * idio)
    trend = growth[:, None] * (t[None, :] / max(T - 1, 1) - 0.5)
    return np.clip(levels[:, None] * (1 + trend + seasonal + shock), 1e-3, None)


def generate_panel(cfg: DgpConfig) -> tuple[MetricsTables, DgpTruth]:
    """Draw a synthetic panel and the truth it was generated from."""
    rng = np.random.default_rng(cfg.seed)
    spec = cfg.spec
    tech = spec.technology
    other = "solar" if tech == "wind" else "wind"
    N, T = cfg.n_zones, cfg.max_periods
    zones = [f"Z{k:02d}" for k in range(N)]
    periods = pd.period_range(cfg.start, periods=T, freq="M").astype(str).to_numpy()

    points = rng.uniform(size=(N, 2))
    pairs = _nearest_neighbor_pairs(points, cfg.n_neighbors)
    start = pd.Period(cfg.start, freq="M").start_time.date()
    end = pd.Period(periods[-1], freq="M").end_time.date()
    topology = ZoneTopology(
        zones=tuple(zones),
        neighbors=frozenset(frozenset((zones[a], zones[b])) for a, b in map(tuple, pairs)),
        lifecycle={z: (start, end) for z in zones},
        first_sample_year={z: start.year for z in zones},
    )

    own_levels = rng.uniform(*cfg.own_level, size=N)
    cross_levels = rng.uniform(*cfg.cross_level, size=N)
    pen = {
        tech: _penetration(rng, own_levels, T, cfg.within_scale, cfg.common_weight),
        other: _penetration(rng, cross_levels, T, cfg.within_scale, cfg.common_weight),
    }

    mean_load = rng.uniform(2_000, 40_000, size=N)
    z_level = (own_levels - own_levels.mean()) / own_levels.std()
    ic_rows = []
    for i in range(N):
        for j_name in topology.neighbors_of(zones[i]):
            j = zones.index(j_name)
            u = rng.lognormal(0.0, 0.6)
            ic_rows.append((zones[i], j_name, cfg.ic_scale * mean_load[i] * u * np.exp(cfg.ic_level_correlation * z_level[j])))
    interconnectors = pd.DataFrame(ic_rows, columns=["from_zone", "to_zone", "ic_mw"])
    total = interconnectors.groupby("from_zone")["ic_mw"].sum().reindex(zones).fillna(0.0).to_numpy()
    zone_ic = pd.DataFrame({"zone": zones, "ic_mw": total, "mean_load": mean_load, "ic_normalized": total / mean_load})

    n_years = int(np.ceil(T / 12))
    has_ps = rng.uniform(size=N) < 0.7
    has_res = rng.uniform(size=N) < 0.6
    ps0 = rng.uniform(0.0, 0.3, size=N) * has_ps
    res0 = rng.uniform(0.0, 1.5, size=N) * has_res
    ps_steps = np.cumsum(rng.uniform(0, 0.02, size=(N, n_years)) * (rng.uniform(size=(N, n_years)) < 0.3), axis=1)
    res_steps = np.cumsum(rng.uniform(0, 0.05, size=(N, n_years)) * (rng.uniform(size=(N, n_years)) < 0.3), axis=1)
    year_idx = np.arange(T) // 12
    hydro_ps = ps0[:, None] + ps_steps[:, year_idx]
    hydro_res = res0[:, None] + res_steps[:, year_idx]
    months = np.arange(T)
    gas_coal = 1.6 + 0.4 * np.sin(2 * np.pi * months / 36) + 0.1 * _ar1(rng, (1, T), 0.8)[0]

    lc_base = rng.uniform(-0.2, 0.4, size=N)
    cov_base = rng.uniform(0.4, 1.0, size=N)
    load_corr = {
        t_: np.clip(lc_base[:, None] + 0.1 * np.sin(2 * np.pi * months / 12)[None, :] + 0.08 * rng.standard_normal((N, T)), -0.99, 0.99)
        for t_ in (tech, other)
    }
    cov = {t_: np.clip(cov_base[:, None] + 0.1 * rng.standard_normal((N, T)), 0.05, None) for t_ in (tech, other)}

    lengths = rng.integers(cfg.min_periods, cfg.max_periods + 1, size=N)
    offsets = np.array([rng.integers(0, T - L + 1) for L in lengths])
    in_window = (months[None, :] >= offsets[:, None]) & (months[None, :] < (offsets + lengths)[:, None])

    zz = np.repeat(zones, T)
    pp = np.tile(periods, N)
    frames = []
    for t_ in (tech, other):
        frames.append(
            pd.DataFrame(
                {
                    "zone": zz,
                    "period": pp,
                    "technology": t_,
                    "mv": np.nan,
                    "avg_price": 1.0,
                    "vf": np.where(in_window.ravel(), 0.0, np.nan) if t_ == tech else np.nan,
                    "penetration": pen[t_].ravel(),
                    "cov": cov[t_].ravel(),
                    "load_corr": load_corr[t_].ravel(),
                    "gen_total": (pen[t_] * mean_load[:, None] * 730.0).ravel(),
                    "hours": 730,
                    "coverage": 1.0,
                    "flag": np.where(in_window.ravel(), "", "outside estimation window") if t_ == tech else "not generated",
                }
            )
        )
    metrics = pd.concat(frames, ignore_index=True)[METRIC_COLUMNS]
    controls = pd.DataFrame(
        {
            "zone": zz,
            "period": pp,
            "gas_coal_ratio": np.tile(gas_coal, N),
            "hydro_pumped": hydro_ps.ravel(),
            "hydro_reservoir": hydro_res.ravel(),
        }
    )
    tables = MetricsTables(
        topology=topology,
        aggregation="monthly",
        metrics=metrics,
        controls=controls,
        interconnectors=interconnectors,
        zone_ic=zone_ic,
    )

    design, _ = assemble_design(spec, tables)
    coefs = dict(REFERENCE_COEFFICIENTS[tech])
    coefs["intercept"] = cfg.intercept
    if cfg.coefficients is not None:
        unknown = set(cfg.coefficients) - set(design.columns)
        if unknown:
            raise ConfigError(f"coefficients for columns not in the design: {sorted(unknown)}")
        coefs.update(cfg.coefficients)
    beta = np.array([coefs.get(c, 0.0) for c in design.columns])

    noise = np.zeros(design.n_obs)
    ent = design.zones
    for zone in np.unique(ent):
        rows = np.flatnonzero(ent == zone)
        eps = rng.standard_normal(len(rows))
        e = np.empty(len(rows))
        e[0] = eps[0] / np.sqrt(1 - cfg.rho**2)
        for t in range(1, len(rows)):
            e[t] = cfg.rho * e[t - 1] + eps[t]
        noise[rows] = cfg.noise_scale * e
    y = design.X @ beta + noise

    own = metrics["technology"] == tech
    key = pd.MultiIndex.from_arrays([metrics.loc[own, "zone"], metrics.loc[own, "period"]])
    vf = pd.Series(y, index=pd.MultiIndex.from_arrays([design.zones, design.periods]))
    metrics.loc[own, "vf"] = vf.reindex(key).to_numpy()
    metrics.loc[own, "mv"] = metrics.loc[own, "vf"]
    truth = DgpTruth(
        coefficients={c: float(b) for c, b in zip(design.columns, beta)},
        columns=design.columns,
        config=cfg.to_dict(),
        n_obs=design.n_obs,
    )
    return tables.with_metrics(metrics), truth


