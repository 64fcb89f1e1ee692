"""Hourly multi-zone merit-order market simulator.

Each zone has a linear thermal supply curve, price = intercept + slope *
thermal output, where thermal output is load minus wind minus solar plus net
exports.  Trade between adjacent zones is cleared by repeated pairwise
price equalization subject to interconnector limits (coordinate descent on
total thermal cost), vectorized over hours.  The result is written in the
same CSV formats the ingest module reads.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd

from spillover.errors import ConfigError, NumericalError
from spillover.ingest import (
    HourlyStore,
    ZoneTopology,
    write_exchanges_csv,
    write_fuel_prices,
    write_hourly_csv,
    write_hydro,
    write_topology,
)


class InfeasibleClearing(NumericalError):
    pass


@dataclass(frozen=True)
class MeritOrderConfig:
    """Simulator settings.

    Ranges are (low, high) for uniform draws per zone.  Capacities and
    limits are multiples of the zone's mean load.  Any ``*_override``
    replaces the draw with explicit per-zone values (or per-edge for
    ``limit_override``, keyed ``"A|B"``); ``inf`` limits are allowed.
    """

    n_zones: int = 6
    start_year: int = 2019
    years: int = 2
    mean_load: tuple[float, float] = (3_000.0, 30_000.0)
    supply_intercept: tuple[float, float] = (10.0, 30.0)
    supply_slope: tuple[float, float] = (50.0, 90.0)  # price rise from zero to mean-load thermal output
    wind_capacity: tuple[float, float] = (0.1, 0.6)
    wind_growth: tuple[float, float] = (0.5, 2.0)  # relative capacity growth over the whole horizon
    solar_capacity: tuple[float, float] = (0.05, 0.4)
    solar_growth: tuple[float, float] = (0.0, 0.8)
    wind_correlation: float = 0.6
    solar_correlation: float = 0.9
    wind_persistence: float = 0.97
    wind_diurnal: float = 0.3
    wind_seasonal: float = 0.0  # winter minus summer shift of the wind logit
    interconnector: tuple[float, float] = (0.05, 0.4)
    n_neighbors: int = 2
    price_floor: float | None = None
    thermal_capacity: float | None = None  # multiple of peak load; None = unlimited
    trade_sweeps: int = 200
    seed: int = 0
    mean_load_override: Sequence[float] | None = None
    wind_capacity_override: Sequence[float] | None = None
    solar_capacity_override: Sequence[float] | None = None
    intercept_override: Sequence[float] | None = None
    slope_override: Sequence[float] | None = None
    neighbors_override: Sequence[Sequence[str]] | None = None
    limit_override: Mapping[str, float] | None = None

    def __post_init__(self):
        if self.n_zones < 1 or self.years < 1:
            raise ConfigError("need at least one zone and one year")
        for name in ("wind_correlation", "solar_correlation"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not -1 < self.wind_persistence < 1:
            raise ConfigError("wind_persistence must lie in (-1, 1)")
        if min(self.supply_slope) <= 0:
            raise ConfigError("supply slopes must be positive")
        if min(self.interconnector) < 0:
            raise ConfigError("interconnector limits must be >= 0")
        if self.slope_override is not None and min(self.slope_override) <= 0:
            raise ConfigError("supply slopes must be positive")

    @classmethod
    def from_dict(cls, doc: Mapping) -> MeritOrderConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown simulator option(s) {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) and k not in ("neighbors_override",) else v for k, v in doc.items()}
        return cls(**kw)

    def to_dict(self) -> dict:
        out = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}


@dataclass(frozen=True)
class SyntheticMarket:
    store: HourlyStore
    topology: ZoneTopology
    fuel: pd.DataFrame
    hydro: pd.DataFrame
    thermal: pd.DataFrame = field(repr=False)
    limits: Mapping[tuple[str, str], float] = field(default_factory=dict)

    def write(self, directory: str | Path) -> dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {
            "hourly": directory / "hourly.csv",
            "exchanges": directory / "exchanges.csv",
            "topology": directory / "topology.yaml",
            "fuel_prices": directory / "fuel_prices.csv",
            "hydro": directory / "hydro.csv",
        }
        write_hourly_csv(self.store.hourly, paths["hourly"])
        write_exchanges_csv(self.store.exchanges, paths["exchanges"])
        write_topology(self.topology, paths["topology"])
        write_fuel_prices(self.fuel, paths["fuel_prices"])
        write_hydro(self.hydro, paths["hydro"])
        return paths


def _draw(rng, bounds, n, override=None) -> np.ndarray:
    values = rng.uniform(bounds[0], bounds[1], size=n)
    if override is not None:
        if len(override) != n:
            raise ConfigError(f"override needs {n} values, got {len(override)}")
        values = np.asarray(override, dtype=float)
    return values


def _ar1_columns(rng, hours: int, n: int, phi: float) -> np.ndarray:
    shocks = rng.standard_normal((hours, n))
    out = np.empty((hours, n))
    out[0] = shocks[0]
    s = np.sqrt(1 - phi**2)
    for t in range(1, hours):
        out[t] = phi * out[t - 1] + s * shocks[t]
    return out


def _edges(cfg: MeritOrderConfig, zones: list[str], rng) -> list[tuple[str, str]]:
    if cfg.neighbors_override is not None:
        pairs = {tuple(sorted(map(str, p))) for p in cfg.neighbors_override}
        return sorted(pairs)
    if len(zones) < 2:
        return []
    n = len(zones)
    pairs = {tuple(sorted((zones[i], zones[(i + 1) % n]))) for i in range(n)} if n > 2 else {(zones[0], zones[1])}
    points = rng.uniform(size=(n, 2))
    d = np.linalg.norm(points[:, None] - points[None], axis=2)
    np.fill_diagonal(d, np.inf)
    for i in range(n):
        for j in np.argsort(d[i], kind="stable")[: max(cfg.n_neighbors - 2, 0)]:
            pairs.add(tuple(sorted((zones[i], zones[int(j)]))))
    return sorted(p for p in pairs if p[0] != p[1])


def clear_market(
    residual: np.ndarray,
    intercept: np.ndarray,
    slope: np.ndarray,
    edges: Sequence[tuple[int, int]],
    limits: Sequence[float],
    sweeps: int = 200,
    tol: float = 1e-9,
) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise price equalization.

    ``residual`` is (hours, zones) thermal requirement before trade.  Returns
    ``(flows, exports)``: flows (hours, edges) positive from the first to the
    second zone of each edge, and net exports (hours, zones).
    """
    hours, n = residual.shape
    flows = np.zeros((hours, len(edges)))
    exports = np.zeros((hours, n))
    if not edges:
        return flows, exports
    scale = max(float(np.abs(residual).max()), 1.0)
    for _ in range(sweeps):
        biggest = 0.0
        for e, (i, j) in enumerate(edges):
            p_i = intercept[i] + slope[i] * (residual[:, i] + exports[:, i])
            p_j = intercept[j] + slope[j] * (residual[:, j] + exports[:, j])
            target = np.clip(flows[:, e] + (p_j - p_i) / (slope[i] + slope[j]), -limits[e], limits[e])
            step = target - flows[:, e]
            flows[:, e] = target
            exports[:, i] += step
            exports[:, j] -= step
            biggest = max(biggest, float(np.abs(step).max()))
        if biggest <= tol * scale:
            break
    return flows, exports


def generate_hourly(cfg: MeritOrderConfig) -> SyntheticMarket:
    """Simulate hourly prices, generation, load and exchanges."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_zones
    zones = [f"M{k:02d}" for k in range(n)]
    index = pd.date_range(f"{cfg.start_year}-01-01", f"{cfg.start_year + cfg.years}-01-01", freq="h", tz="UTC", inclusive="left")
    H = len(index)
    hour = index.hour.to_numpy()
    doy = index.dayofyear.to_numpy()
    frac = np.arange(H) / H

    mean_load = _draw(rng, cfg.mean_load, n, cfg.mean_load_override)
    a = _draw(rng, cfg.supply_intercept, n, cfg.intercept_override)
    b = _draw(rng, cfg.supply_slope, n) / mean_load
    if cfg.slope_override is not None:
        b = np.asarray(cfg.slope_override, dtype=float)
    wind_cap0 = _draw(rng, cfg.wind_capacity, n, cfg.wind_capacity_override)
    wind_growth = _draw(rng, cfg.wind_growth, n)
    solar_cap0 = _draw(rng, cfg.solar_capacity, n, cfg.solar_capacity_override)
    solar_growth = _draw(rng, cfg.solar_growth, n)

    # Wind: shared continental factor plus zone noise, persistent over hours.
    common = _ar1_columns(rng, H, 1, cfg.wind_persistence)
    local = _ar1_columns(rng, H, n, cfg.wind_persistence)
    c = cfg.wind_correlation
    latent = np.sqrt(c) * common + np.sqrt(1 - c) * local
    diurnal = cfg.wind_diurnal * np.cos(2 * np.pi * (hour - 15) / 24)[:, None]
    winter = -0.5 * cfg.wind_seasonal * np.cos(2 * np.pi * (doy - 172) / 365.25)[:, None]
    wind_cf = 1.0 / (1.0 + np.exp(-(-0.9 + 1.3 * latent + diurnal + winter)))

    # Solar: clear-sky profile times daily cloudiness.
    season = np.cos(2 * np.pi * (doy - 172) / 365.25)
    half_day = 6.0 + 2.0 * season
    angle = np.clip(1 - np.abs(hour + 0.5 - 12.5) / half_day, 0, None)
    clear = np.sin(np.pi / 2 * angle) * (0.75 + 0.25 * season)
    days = (np.arange(H) // 24)
    n_days = days[-1] + 1
    cs = cfg.solar_correlation
    cloud_latent = np.sqrt(cs) * _ar1_columns(rng, n_days, 1, 0.6) + np.sqrt(1 - cs) * _ar1_columns(rng, n_days, n, 0.6)
    cloud = 0.35 + 0.65 / (1 + np.exp(-1.5 * cloud_latent))
    solar_cf = clear[:, None] * cloud[days]

    dow = index.dayofweek.to_numpy()
    shape = 1 + 0.12 * np.sin(np.pi * np.clip((hour - 6) / 16, 0, 1))[:, None] - 0.06 * (dow >= 5)[:, None]
    seasonal_load = 1 + 0.1 * season[:, None] * rng.uniform(0.5, 1.5, size=n)[None, :]
    load = mean_load[None, :] * shape * seasonal_load * (1 + 0.02 * rng.standard_normal((H, n)))
    load = load / (shape * seasonal_load).mean(axis=0)[None, :]

    wind = (mean_load * wind_cap0)[None, :] * (1 + wind_growth[None, :] * frac[:, None]) * wind_cf
    solar = (mean_load * solar_cap0)[None, :] * (1 + solar_growth[None, :] * frac[:, None]) * solar_cf

    edge_names = _edges(cfg, zones, rng)
    col = {z: k for k, z in enumerate(zones)}
    unknown = {z for e in edge_names for z in e} - set(zones)
    if unknown:
        raise ConfigError(f"neighbors_override names unknown zones {sorted(unknown)}")
    edges = [(col[p], col[q]) for p, q in edge_names]
    limits = []
    for p, q in edge_names:
        key = f"{p}|{q}"
        if cfg.limit_override is not None and key in cfg.limit_override:
            limits.append(float(cfg.limit_override[key]))
        else:
            limits.append(float(rng.uniform(*cfg.interconnector) * min(mean_load[col[p]], mean_load[col[q]])))

    residual = load - wind - solar
    flows, exports = clear_market(residual, a, b, edges, np.asarray(limits), cfg.trade_sweeps)
    thermal = residual + exports
    if cfg.thermal_capacity is not None:
        cap = cfg.thermal_capacity * load.max(axis=0)
        over = thermal > cap[None, :]
        if over.any():
            h, z = np.argwhere(over)[0]
            raise InfeasibleClearing(f"zone {zones[z]} cannot meet load at {index[h]}: thermal {thermal[h, z]:.1f} > {cap[z]:.1f} MW")
    price = a[None, :] + b[None, :] * thermal
    if cfg.price_floor is not None:
        price = np.maximum(price, cfg.price_floor)

    hourly = pd.DataFrame(
        {
            "zone": np.repeat(zones, H),
            "timestamp_utc": np.tile(index, n),
            "price": price.T.ravel(),
            "wind_gen": wind.T.ravel(),
            "solar_gen": solar.T.ravel(),
            "load": load.T.ravel(),
        }
    )
    exchanges = pd.DataFrame(
        {
            "zone_from": np.repeat([p for p, _ in edge_names], H),
            "zone_to": np.repeat([q for _, q in edge_names], H),
            "timestamp_utc": np.tile(index, len(edge_names)),
            "net_export": flows.T.ravel(),
        }
    )
    if exchanges.empty:
        exchanges["timestamp_utc"] = pd.to_datetime(exchanges["timestamp_utc"], utc=True)
    start = date(cfg.start_year, 1, 1)
    end = date(cfg.start_year + cfg.years - 1, 12, 31)
    topology = ZoneTopology(
        zones=tuple(zones),
        neighbors=frozenset(frozenset(e) for e in edge_names),
        lifecycle={z: (start, end) for z in zones},
        first_sample_year={z: cfg.start_year for z in zones},
    )

    months = pd.period_range(f"{cfg.start_year}-01", periods=12 * cfg.years, freq="M")
    m = np.arange(len(months))
    fuel = pd.DataFrame(
        {
            "month": months.astype(str),
            "gas": 20 + 8 * np.sin(2 * np.pi * m / 12) + rng.uniform(0, 4, len(m)) + m * 0.3,
            "coal": 9 + 1.5 * np.cos(2 * np.pi * m / 12) + rng.uniform(0, 1, len(m)),
            "eua": 20 + m * 0.8 + rng.uniform(0, 3, len(m)),
        }
    )
    hydro_rows = []
    ps0 = rng.uniform(0, 0.15, n) * (rng.uniform(size=n) < 0.7)
    res0 = rng.uniform(0, 0.8, n) * (rng.uniform(size=n) < 0.6)
    for k, zone in enumerate(zones):
        ps, res = ps0[k] * mean_load[k], res0[k] * mean_load[k]
        for y in range(cfg.years):
            if y and rng.uniform() < 0.5:
                ps += rng.uniform(0, 0.03) * mean_load[k]
            if y and rng.uniform() < 0.3:
                res += rng.uniform(0, 0.05) * mean_load[k]
            hydro_rows.append((zone, cfg.start_year + y, ps, res))
    hydro = pd.DataFrame(hydro_rows, columns=["zone", "year", "pumped_mw", "reservoir_mw"])

    thermal_frame = pd.DataFrame(thermal, index=index, columns=zones)
    return SyntheticMarket(
        store=HourlyStore(hourly=hourly, exchanges=exchanges),
        topology=topology,
        fuel=fuel,
        hydro=hydro,
        thermal=thermal_frame,
        limits={e: lim for e, lim in zip(edge_names, limits)},
    )
