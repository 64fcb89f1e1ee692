"""Zone-period metrics: market value, value factor, penetration, variability,
load correlation, clean fuel-price ratio, hydro and interconnector capacity.

The scalar functions work on a single window.  :func:`build_tables` computes
the same quantities for every (zone, period, technology) at once with grouped
sums; the test-suite checks the two paths against each other.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from spillover.errors import DataError
from spillover.ingest import AGGREGATION_FREQ, HourlyStore, ZoneTopology, load_topology, write_topology

logger = logging.getLogger(__name__)

TECHNOLOGIES = ("wind", "solar")

METRIC_COLUMNS = [
    "zone", "period", "technology", "mv", "avg_price", "vf", "penetration",
    "cov", "load_corr", "gen_total", "hours", "coverage", "flag",
]
CONTROL_COLUMNS = ["zone", "period", "gas_coal_ratio", "hydro_pumped", "hydro_reservoir"]


class ExcludedObservation(DataError):
    """A window whose metric is undefined; carries the exclusion reason."""


@dataclass(frozen=True)
class Thresholds:
    min_coverage: float = 0.9
    min_generation_share: float = 0.001
    min_average_penetration: float = 0.005
    price_epsilon: float = 1e-6


@dataclass(frozen=True)
class CarbonContent:
    """Emission factors in tCO2 per MWh thermal."""

    gas: float = 0.202
    coal: float = 0.340


# --------------------------------------------------------------------------- #
# Single-window metrics
# --------------------------------------------------------------------------- #


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"series not aligned: {a.shape} vs {b.shape}")
    return a, b


def market_value(prices, gen, min_generation: float = 0.0) -> float:
    """Generation-weighted average price over the window."""
    p, g = _pair(prices, gen)
    total = g.sum()
    if not total > min_generation:
        raise ExcludedObservation("insufficient generation")
    return float(np.dot(p, g) / total)


def value_factor(mv: float, prices, epsilon: float = 1e-6) -> float:
    p = np.asarray(prices, dtype=float)
    avg = p.mean()
    if abs(avg) < epsilon:
        raise ExcludedObservation("average price near zero")
    return float(mv / avg)


def penetration(gen, load) -> float:
    g, c = _pair(gen, load)
    total = c.sum()
    if not total > 0:
        raise ExcludedObservation("no load")
    return float(g.sum() / total)


def coefficient_of_variation(gen) -> float:
    """Population standard deviation over mean."""
    g = np.asarray(gen, dtype=float)
    mean = g.mean()
    if not mean > 0:
        raise ExcludedObservation("zero mean generation")
    return float(np.sqrt(np.mean((g - mean) ** 2)) / mean)


def load_correlation(gen, load) -> float:
    g, c = _pair(gen, load)
    dg = g - g.mean()
    dc = c - c.mean()
    sg = np.dot(dg, dg)
    sc = np.dot(dc, dc)
    if sg == 0 or sc == 0:
        raise ExcludedObservation("constant series, correlation undefined")
    return float(np.dot(dg, dc) / np.sqrt(sg * sc))


def clean_fuel_ratio(gas, coal, eua, carbon_gas: float = 0.202, carbon_coal: float = 0.340):
    """Clean gas price over clean coal price (fuel plus carbon cost per MWh thermal)."""
    gas = np.asarray(gas, dtype=float)
    coal = np.asarray(coal, dtype=float)
    eua = np.asarray(eua, dtype=float)
    denominator = coal + eua * carbon_coal
    if np.any(denominator <= 0):
        raise DataError("clean coal price must be positive")
    ratio = (gas + eua * carbon_gas) / denominator
    return float(ratio) if ratio.ndim == 0 else ratio


def quantile95(values) -> float:
    """95% quantile, linear interpolation between order statistics."""
    return float(np.quantile(np.asarray(values, dtype=float), 0.95, method="linear"))


def border_capacity(net_exports, timestamps, year: int) -> float:
    """Q95 of absolute net exports over the hours of ``year``; 0.0 if none."""
    ts = pd.DatetimeIndex(timestamps)
    flows = np.asarray(net_exports, dtype=float)[np.asarray(ts.year == year)]
    if flows.size == 0:
        return 0.0
    return quantile95(np.abs(flows))


def interconnector_proxy(store: HourlyStore, topology: ZoneTopology) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Time-invariant interconnector capacities from first-sample-year exchanges.

    Returns ``(pairs, zones)``.  ``pairs`` has one directed row per adjacent
    (from_zone, to_zone) with ``ic_mw`` measured over the focal (from) zone's
    first sample year.  ``zones`` holds the per-zone total, the zone's mean
    hourly load in that year and the normalized capacity.
    """
    ex = store.exchanges
    ex = ex.assign(year=ex["timestamp_utc"].dt.year)
    by_border = {key: grp for key, grp in ex.groupby(["zone_from", "zone_to", "year"], sort=True)}
    rows = []
    for zone in topology.zones:
        year = topology.first_sample_year[zone]
        for other in topology.neighbors_of(zone):
            grp = by_border.get((*sorted((zone, other)), year))
            if grp is not None:
                ic = quantile95(np.abs(grp["net_export"].to_numpy(dtype=float)))
            else:
                warnings.warn(f"no exchange data for {zone}-{other} in {year}; capacity set to 0", stacklevel=2)
                ic = 0.0
            rows.append((zone, other, ic))
    pairs = pd.DataFrame(rows, columns=["from_zone", "to_zone", "ic_mw"])

    hourly = store.hourly
    yearly_load = hourly.groupby([hourly["zone"], hourly["timestamp_utc"].dt.year])["load"].mean()
    zone_rows = []
    for zone in topology.zones:
        year = topology.first_sample_year[zone]
        mean_load = float(yearly_load.get((zone, year), float("nan")))
        total = float(pairs.loc[pairs["from_zone"] == zone, "ic_mw"].sum())
        if not mean_load > 0:
            warnings.warn(f"zone {zone}: no load data in first sample year {year}", stacklevel=2)
        zone_rows.append((zone, total, mean_load, total / mean_load if mean_load > 0 else float("nan")))
    zones = pd.DataFrame(zone_rows, columns=["zone", "ic_mw", "mean_load", "ic_normalized"])
    return pairs, zones


# --------------------------------------------------------------------------- #
# Tables
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class MetricsTables:
    """Everything the panel module needs, at one aggregation level.

    ``metrics``: tidy (zone, period, technology) rows, see ``METRIC_COLUMNS``;
    ``vf``/``mv`` are NaN where ``flag`` names an exclusion reason.
    ``controls``: (zone, period) rows with the common fuel ratio and
    load-normalized hydro capacities.
    ``interconnectors``: directed (from_zone, to_zone, ic_mw).
    ``zone_ic``: per-zone total, mean load, normalized capacity.
    """

    topology: ZoneTopology
    aggregation: str
    metrics: pd.DataFrame
    controls: pd.DataFrame
    interconnectors: pd.DataFrame
    zone_ic: pd.DataFrame
    exclusions: pd.DataFrame = field(
        default_factory=lambda: pd.DataFrame(columns=["zone", "period", "technology", "reason"])
    )

    def with_metrics(self, metrics: pd.DataFrame) -> MetricsTables:
        return replace(self, metrics=metrics)

    def write(self, directory: str | Path) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for name in ("metrics", "controls", "interconnectors", "zone_ic", "exclusions"):
            path = directory / f"{name}.csv"
            getattr(self, name).to_csv(path, index=False, lineterminator="\n")
            written.append(path)
        topo = directory / "topology.yaml"
        write_topology(self.topology, topo)
        meta = directory / "meta.json"
        meta.write_text(json.dumps({"aggregation": self.aggregation}, indent=2) + "\n")
        return written + [topo, meta]

    @classmethod
    def read(cls, directory: str | Path) -> MetricsTables:
        directory = Path(directory)
        try:
            meta = json.loads((directory / "meta.json").read_text())
        except FileNotFoundError as exc:
            raise DataError(f"{directory}: not a metrics directory (meta.json missing)") from exc
        kw = dict(dtype={"zone": str, "period": str, "from_zone": str, "to_zone": str}, float_precision="round_trip")
        metrics = pd.read_csv(directory / "metrics.csv", keep_default_na=False, na_values=[""], **kw)
        metrics["flag"] = metrics["flag"].fillna("").astype(str)
        return cls(
            topology=load_topology(directory / "topology.yaml"),
            aggregation=meta["aggregation"],
            metrics=metrics,
            controls=pd.read_csv(directory / "controls.csv", **kw),
            interconnectors=pd.read_csv(directory / "interconnectors.csv", **kw),
            zone_ic=pd.read_csv(directory / "zone_ic.csv", **kw),
            exclusions=pd.read_csv(directory / "exclusions.csv", **kw),
        )


def _period_labels(ts: pd.Series, aggregation: str) -> tuple[np.ndarray, pd.PeriodIndex]:
    try:
        freq = AGGREGATION_FREQ[aggregation]
    except KeyError as exc:
        raise ValueError(f"unknown aggregation {aggregation!r}") from exc
    periods = pd.PeriodIndex(ts.dt.tz_convert(None), freq=freq)
    codes, uniques = pd.factorize(periods, sort=True)
    return codes, uniques


def _fuel_ratio_by_period(periods: pd.PeriodIndex, fuel: pd.DataFrame | None, carbon: CarbonContent) -> np.ndarray:
    """Mean monthly ratio over the months a period spans; NaN if any month is missing."""
    if fuel is None:
        return np.full(len(periods), np.nan)
    ratio = clean_fuel_ratio(fuel["gas"], fuel["coal"], fuel["eua"], carbon.gas, carbon.coal)
    by_month = dict(zip(pd.PeriodIndex(fuel["month"], freq="M").asi8, np.atleast_1d(ratio)))
    first = periods.asfreq("M", how="start").asi8
    last = periods.asfreq("M", how="end").asi8
    spans = pd.DataFrame({"first": first, "last": last})
    out = np.full(len(periods), np.nan)
    for (a, b), rows in spans.groupby(["first", "last"]).indices.items():
        values = [by_month.get(m) for m in range(a, b + 1)]
        if all(v is not None for v in values):
            out[rows] = float(np.mean(values))
    return out


def build_tables(
    store: HourlyStore,
    topology: ZoneTopology,
    aggregation: str = "monthly",
    fuel: pd.DataFrame | None = None,
    hydro: pd.DataFrame | None = None,
    thresholds: Thresholds = Thresholds(),
    carbon: CarbonContent = CarbonContent(),
) -> MetricsTables:
    """Aggregate the hourly store into zone-period metrics and controls."""
    h = store.hourly
    codes, periods = _period_labels(h["timestamp_utc"], aggregation)
    labels = periods.astype(str).to_numpy()
    frame = pd.DataFrame(
        {
            "zone": h["zone"].to_numpy(),
            "pcode": codes,
            "price": h["price"].to_numpy(),
            "load": h["load"].to_numpy(),
            "wind": h["wind_gen"].to_numpy(),
            "solar": h["solar_gen"].to_numpy(),
        }
    )
    keys = ["zone", "pcode"]
    grouped = frame.groupby(keys, sort=True)
    base = grouped.agg(hours=("price", "size"), price_sum=("price", "sum"), load_sum=("load", "sum"))
    period_hours = ((periods + 1).start_time - periods.start_time) / pd.Timedelta(hours=1)
    period_hours = np.asarray(period_hours, dtype=float)
    base["coverage"] = base["hours"] / period_hours[base.index.get_level_values("pcode")]

    low_cov = base["coverage"] < thresholds.min_coverage
    dropped = base.index[low_cov]
    exclusions = [
        pd.DataFrame(
            {
                "zone": dropped.get_level_values("zone"),
                "period": labels[dropped.get_level_values("pcode")],
                "technology": "",
                "reason": "coverage below minimum",
            }
        )
    ]
    if len(dropped):
        logger.info("excluded %d zone-period(s) with coverage below %.2f", len(dropped), thresholds.min_coverage)

    means = grouped[["load", "wind", "solar"]].transform("mean")
    d_load = frame["load"] - means["load"]
    tables = []
    for tech in TECHNOLOGIES:
        g = frame[tech]
        dg = g - means[tech]
        work = pd.DataFrame(
            {
                "zone": frame["zone"],
                "pcode": frame["pcode"],
                "g": g,
                "pg": frame["price"] * g,
                "dg2": dg * dg,
                "dl2": d_load * d_load,
                "dgdl": dg * d_load,
            }
        )
        s = work.groupby(keys, sort=True).sum()
        out = base.copy()
        out["gen_total"] = s["g"]
        out["avg_price"] = base["price_sum"] / base["hours"]
        out["penetration"] = s["g"] / base["load_sum"]
        flag = np.full(len(out), "", dtype=object)
        insufficient = ~(s["g"] > thresholds.min_generation_share * base["load_sum"]) | ~(s["g"] > 0)
        flag[insufficient.to_numpy()] = "insufficient generation"
        with np.errstate(divide="ignore", invalid="ignore"):
            mv = s["pg"] / s["g"]
            vf = mv / out["avg_price"]
            mean_g = s["g"] / base["hours"]
            cov = np.sqrt(s["dg2"] / base["hours"]) / mean_g
            corr = s["dgdl"] / np.sqrt(s["dg2"] * s["dl2"])
        price_bad = (out["avg_price"].abs() < thresholds.price_epsilon).to_numpy() & (flag == "")
        flag[price_bad] = "average price near zero"
        mv = mv.where(~insufficient)
        vf = vf.where(flag == "")
        out["mv"] = mv
        out["vf"] = vf
        out["cov"] = cov.where(mean_g > 0)
        out["load_corr"] = corr.where((s["dg2"] > 0) & (s["dl2"] > 0))
        out["flag"] = flag
        out["technology"] = tech
        tables.append(out[~low_cov])
        flagged = (flag != "") & ~low_cov.to_numpy()
        idx = out.index[flagged]
        exclusions.append(
            pd.DataFrame(
                {
                    "zone": idx.get_level_values("zone"),
                    "period": labels[idx.get_level_values("pcode")],
                    "technology": tech,
                    "reason": flag[flagged],
                }
            )
        )

    metrics = pd.concat(tables).reset_index()
    metrics["period"] = labels[metrics["pcode"].to_numpy()]
    metrics["hours"] = metrics["hours"].astype(int)
    metrics = metrics.sort_values(["technology", "zone", "period"], kind="mergesort")[METRIC_COLUMNS].reset_index(drop=True)

    kept = base[~low_cov].reset_index()
    ratio = _fuel_ratio_by_period(periods, fuel, carbon)
    controls = pd.DataFrame(
        {
            "zone": kept["zone"].to_numpy(),
            "period": labels[kept["pcode"].to_numpy()],
            "gas_coal_ratio": ratio[kept["pcode"].to_numpy()],
        }
    )
    years = np.asarray(periods.year)[kept["pcode"].to_numpy()]
    if hydro is not None:
        yearly_load = h.assign(year=h["timestamp_utc"].dt.year).groupby(["zone", "year"])["load"].mean()
        hy = hydro.set_index(["zone", "year"])
        idx = pd.MultiIndex.from_arrays([controls["zone"], years])
        load = yearly_load.reindex(idx).to_numpy()
        controls["hydro_pumped"] = hy["pumped_mw"].reindex(idx).to_numpy() / load
        controls["hydro_reservoir"] = hy["reservoir_mw"].reindex(idx).to_numpy() / load
    else:
        controls["hydro_pumped"] = np.nan
        controls["hydro_reservoir"] = np.nan
    controls = controls.sort_values(["zone", "period"], kind="mergesort").reset_index(drop=True)

    pairs, zone_ic = interconnector_proxy(store, topology)
    return MetricsTables(
        topology=topology,
        aggregation=aggregation,
        metrics=metrics,
        controls=controls,
        interconnectors=pairs,
        zone_ic=zone_ic,
        exclusions=pd.concat(exclusions, ignore_index=True)[["zone", "period", "technology", "reason"]],
    )
