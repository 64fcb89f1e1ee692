"""Robustness sweeps: leave-one-zone-out, temporal aggregation, weighting scheme
and estimator comparison.

Every sweep returns a :class:`SweepResult` whose ``table`` is long format
(one row per run and coefficient) and whose ``specs`` record the exact
specification of each run.  Runs are independent and may be executed on a
thread pool; results are merged in run order, so output does not depend on
the number of workers.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from spillover.errors import ConfigError, DataError, NumericalError
from spillover.estimate import ModelResult, ModelSpec, fit
from spillover.ingest import HourlyStore, ZoneTopology
from spillover.metrics import CarbonContent, MetricsTables, Thresholds, build_tables
from spillover.panel import WITHIN_TYPE

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["run_id", "variant", "coefficient", "estimate", "se", "ci_low", "ci_high", "n_obs", "status"]
SWEEP_KEYS = {"loo": "omitted_zone", "aggregation": "level", "weights": "scheme", "estimators": "estimator"}
SWEEP_LEVELS = ("daily", "monthly", "annual")
HOURLY_CONTROLS = ("hydro_pumped", "hydro_reservoir", "gas_coal_ratio")  # load_corr and cov need more than one hour


def coefficients_of_interest(technology: str) -> list[str]:
    dom, nbr = f"domestic_{technology}", f"neighboring_{technology}"
    return [dom, nbr, f"{dom}:interconnector", f"{nbr}:interconnector"]


@dataclass
class SweepResult:
    sweep: str
    table: pd.DataFrame
    specs: dict[str, dict] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    @property
    def failed(self) -> list[str]:
        status = self.table.drop_duplicates("run_id").set_index("run_id")["status"]
        return [r for r, s in status.items() if s != "ok"]

    def to_csv(self, path: str | Path) -> None:
        frame = self.table.rename(columns={"variant": SWEEP_KEYS[self.sweep]})
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")

    def write(self, directory: str | Path) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv = directory / f"sensitivity_{self.sweep}.csv"
        meta = directory / f"sensitivity_{self.sweep}.json"
        self.to_csv(csv)
        doc = {"sweep": self.sweep, "runs": self.specs, "summary": self.summary}
        meta.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")
        return [csv, meta]


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    raise TypeError(f"not serializable: {type(value)}")


def _rows(run_id: str, variant: str, result: ModelResult, names: Sequence[str]) -> list[dict]:
    ci = result.conf_int()
    se = result.std_errors
    rows = []
    for name in names:
        if name not in result.params.index:
            continue
        rows.append(
            {
                "run_id": run_id,
                "variant": variant,
                "coefficient": name,
                "estimate": float(result.params[name]),
                "se": float(se[name]),
                "ci_low": float(ci.loc[name, "low"]),
                "ci_high": float(ci.loc[name, "high"]),
                "n_obs": result.n_obs,
                "status": "ok",
            }
        )
    return rows


def _failed_row(run_id: str, variant: str, error: Exception) -> dict:
    return {
        "run_id": run_id,
        "variant": variant,
        "coefficient": "",
        "estimate": np.nan,
        "se": np.nan,
        "ci_low": np.nan,
        "ci_high": np.nan,
        "n_obs": 0,
        "status": f"failed: {error}",
    }


def _run_all(jobs: Sequence[tuple[str, Callable[[], object]]], workers: int) -> list[tuple[str, object]]:
    """Run independent jobs; errors are returned, not raised.  Order follows ``jobs``."""

    def call(job):
        key, fn = job
        try:
            return key, fn()
        except (NumericalError, DataError) as exc:
            return key, exc

    if workers <= 1 or len(jobs) <= 1:
        return [call(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(call, jobs))


def _frame(rows: list[dict]) -> pd.DataFrame:
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def leave_one_out(
    spec: ModelSpec,
    tables: MetricsTables,
    zones: Iterable[str] | None = None,
    coefficients: Sequence[str] | None = None,
    workers: int = 1,
) -> SweepResult:
    """Refit once per omitted zone.

    The omitted zone's rows leave the estimation sample but its penetration
    still enters its neighbors' spatial lags.  ``zones`` defaults to the
    zones present in the full-sample estimation sample.
    """
    names = list(coefficients or coefficients_of_interest(spec.technology))
    full = fit(spec, tables)
    sample_zones = sorted(set(full.design.zones))
    targets = sorted(set(zones)) if zones is not None else sample_zones
    if len(sample_zones) < 3:
        raise DataError(f"leave-one-out needs at least 3 zones in the sample, found {len(sample_zones)}")
    rows = _rows("full", "", full, names)
    specs = {"full": {"spec": spec.to_dict(), "exclude_zones": []}}
    jobs = [(zone, (lambda z=zone: fit(spec, tables, exclude_zones=[z]))) for zone in targets]
    for zone, outcome in _run_all(jobs, workers):
        run_id = f"loo_{zone}"
        specs[run_id] = {"spec": spec.to_dict(), "exclude_zones": [zone]}
        if isinstance(outcome, Exception):
            logger.warning("leave-one-out without %s failed: %s", zone, outcome)
            rows.append(_failed_row(run_id, zone, outcome))
        else:
            rows.extend(_rows(run_id, zone, outcome, names))
    table = _frame(rows)
    loo = table[(table.run_id != "full") & (table.status == "ok")]
    ci = full.conf_int()
    inside = {}
    for name in names:
        if name not in ci.index:
            continue
        est = loo.loc[loo.coefficient == name, "estimate"]
        inside[name] = float(((est >= ci.loc[name, "low"]) & (est <= ci.loc[name, "high"])).mean()) if len(est) else float("nan")
    summary = {"runs": len(targets), "failed": int((table.status != "ok").sum()), "share_inside_full_ci": inside}
    return SweepResult("loo", table, specs, summary)


def _sample_periods(tables: MetricsTables, technology: str) -> pd.Series:
    m = tables.metrics
    m = m[(m.technology == technology) & m.vf.notna()]
    return m.groupby("zone")["period"].nunique()


def hourly_null_check(
    spec: ModelSpec,
    store: HourlyStore,
    topology: ZoneTopology,
    fuel: pd.DataFrame | None = None,
    hydro: pd.DataFrame | None = None,
    thresholds: Thresholds = Thresholds(),
    carbon: CarbonContent = CarbonContent(),
    tables: MetricsTables | None = None,
) -> dict:
    """At hourly resolution the value factor is identically one.

    Returns the largest |VF - 1| over all hourly observations and the fitted
    penetration coefficients, which must vanish.  Controls that need several
    hours inside the window (load correlation, CoV) are dropped.  Pass
    prebuilt hourly ``tables`` to skip the aggregation step.
    """
    if tables is None:
        tables = build_tables(store, topology, "hourly", fuel, hydro, thresholds, carbon)
    vf = tables.metrics.loc[tables.metrics.technology == spec.technology, "vf"].dropna()
    controls = tuple(c for c in spec.controls if c in HOURLY_CONTROLS)
    hourly_spec = spec.replace(aggregation="hourly", controls=controls)
    result = fit(hourly_spec, tables)
    slopes = {n: float(result.params[n]) for n in result.params.index if "domestic_" in n or "neighboring_" in n}
    return {
        "n_obs": result.n_obs,
        "max_vf_deviation": float(np.abs(vf.to_numpy() - 1.0).max()) if len(vf) else float("nan"),
        "coefficients": slopes,
        "max_abs_slope": max((abs(v) for v in slopes.values()), default=0.0),
        "spec": hourly_spec.to_dict(),
    }


def aggregation_sweep(
    spec: ModelSpec,
    store: HourlyStore,
    topology: ZoneTopology,
    fuel: pd.DataFrame | None = None,
    hydro: pd.DataFrame | None = None,
    levels: Sequence[str] = SWEEP_LEVELS,
    thresholds: Thresholds = Thresholds(),
    carbon: CarbonContent = CarbonContent(),
    coefficients: Sequence[str] | None = None,
    hourly_check: bool = True,
    workers: int = 1,
    cache: dict[str, MetricsTables] | None = None,
) -> SweepResult:
    """Recompute all metrics and refit at each temporal resolution.

    ``cache`` (level -> tables) lets repeated sweeps over the same data share
    the aggregated tables; it is filled as levels are built.
    """
    cache = {} if cache is None else cache

    def tables_for(level: str) -> MetricsTables:
        if level not in cache:
            cache[level] = build_tables(store, topology, level, fuel, hydro, thresholds, carbon)
        return cache[level]

    unknown = [lv for lv in levels if lv not in SWEEP_LEVELS]
    if unknown:
        raise ConfigError(f"unknown aggregation level(s) {unknown}; expected a subset of {list(SWEEP_LEVELS)}")
    names = list(coefficients or coefficients_of_interest(spec.technology))

    def run(level: str) -> tuple[ModelResult, list[str]]:
        tables = tables_for(level)
        counts = _sample_periods(tables, spec.technology)
        short = sorted(counts.index[counts < 2])
        if short:
            logger.warning("%s level: dropping %d zone(s) with fewer than 2 periods: %s", level, len(short), short)
        return fit(spec.replace(aggregation=level), tables, exclude_zones=short), short

    rows, specs, dropped = [], {}, {}
    for level, outcome in _run_all([(lv, (lambda lv=lv: run(lv))) for lv in levels], workers):
        specs[level] = spec.replace(aggregation=level).to_dict()
        if isinstance(outcome, Exception):
            logger.warning("%s aggregation failed: %s", level, outcome)
            rows.append(_failed_row(level, level, outcome))
            continue
        result, short = outcome
        dropped[level] = short
        rows.extend(_rows(level, level, result, names))
    summary: dict = {"dropped_zones": dropped}
    if hourly_check:
        summary["hourly"] = hourly_null_check(spec, store, topology, tables=tables_for("hourly"))
    return SweepResult("aggregation", _frame(rows), specs, summary)


def weights_variant(
    spec: ModelSpec,
    tables: MetricsTables,
    coefficients: Sequence[str] | None = None,
    workers: int = 1,
) -> SweepResult:
    """Interconnector-weighted versus unweighted neighbor averages."""
    names = list(coefficients or coefficients_of_interest(spec.technology))
    schemes = ("ic_weighted", "binary_uniform")
    outcomes = _run_all([(s, (lambda s=s: fit(spec.replace(weights=s), tables))) for s in schemes], workers)
    rows, specs = [], {}
    for scheme, outcome in outcomes:
        specs[scheme] = spec.replace(weights=scheme).to_dict()
        if isinstance(outcome, Exception):
            raise outcome
        rows.extend(_rows(scheme, scheme, outcome, names))
    table = _frame(rows)
    return SweepResult("weights", table, specs, {"paired": paired(table).reset_index().to_dict(orient="records")})


def paired(table: pd.DataFrame) -> pd.DataFrame:
    """Wide view of a sweep table: one row per coefficient, one estimate/se pair per variant."""
    ok = table[table.status == "ok"]
    est = ok.pivot(index="coefficient", columns="variant", values="estimate")
    se = ok.pivot(index="coefficient", columns="variant", values="se").add_suffix("_se")
    return est.join(se)


def relative_deviation(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = np.maximum(np.abs(a), np.abs(b))
    diff = np.abs(a - b)
    return np.divide(diff, scale, out=np.zeros_like(diff), where=scale > 0)


def estimator_comparison(spec: ModelSpec, tables: MetricsTables, workers: int = 1) -> SweepResult:
    """REWB and FE side by side.

    Within-type coefficients (within effects and interactions) must agree;
    between terms and the intercept exist only in the REWB fit.
    """
    outcomes = dict(
        _run_all([(e, (lambda e=e: fit(spec.replace(estimator=e), tables))) for e in ("rewb", "fe")], workers)
    )
    for outcome in outcomes.values():
        if isinstance(outcome, Exception):
            raise outcome
    rewb, fe = outcomes["rewb"], outcomes["fe"]
    rows, specs = [], {}
    for name, result in (("rewb", rewb), ("fe", fe)):
        specs[name] = spec.replace(estimator=name).to_dict()
        rows.extend(_rows(name, name, result, list(result.params.index)))
    shared = [c for c in fe.params.index if fe.design.kinds[c] in WITHIN_TYPE]
    dev = relative_deviation(rewb.params[shared].to_numpy(), fe.params[shared].to_numpy())
    summary = {
        "max_relative_deviation": float(dev.max()) if len(dev) else 0.0,
        "deviation": dict(zip(shared, map(float, dev))),
        "rewb_only": [c for c in rewb.params.index if c not in fe.params.index],
        "adjusted_r2": {"rewb": rewb.adjusted_r2, "fe": fe.adjusted_r2},
        "n_obs": rewb.n_obs,
    }
    return SweepResult("estimators", _frame(rows), specs, summary)

