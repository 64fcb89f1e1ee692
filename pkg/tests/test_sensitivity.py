import dataclasses
import json
import warnings

import numpy as np
import pandas as pd
import pytest

from spillover.errors import ConfigError
from spillover.estimate import ModelSpec, fit
from spillover.ingest import ZoneTopology
from spillover.panel import WITHIN_TYPE
from spillover.sensitivity import (
    SWEEP_COLUMNS,
    aggregation_sweep,
    coefficients_of_interest,
    estimator_comparison,
    hourly_null_check,
    leave_one_out,
    paired,
    relative_deviation,
    weights_variant,
)
from spillover.synth import DgpConfig, MeritOrderConfig, generate_hourly, generate_panel

MINIMAL = ModelSpec(neighbors=False, cross_technology=False, interconnector=False, controls=())


@pytest.fixture(scope="module")
def panel():
    return generate_panel(DgpConfig(seed=41, n_zones=14))[0]


def test_coefficients_of_interest():
    assert coefficients_of_interest("solar") == [
        "domestic_solar",
        "neighboring_solar",
        "domestic_solar:interconnector",
        "neighboring_solar:interconnector",
    ]


# --------------------------------------------------------------------------- #
# leave-one-out
# --------------------------------------------------------------------------- #


def test_loo_three_zones_three_runs():
    tables, _ = generate_panel(DgpConfig(seed=1, n_zones=3, spec=MINIMAL))
    sweep = leave_one_out(MINIMAL, tables, coefficients=["domestic_wind"])
    runs = sweep.table.run_id.unique()
    assert list(runs) == ["full", "loo_Z00", "loo_Z01", "loo_Z02"]
    assert sweep.summary["runs"] == 3
    assert not sweep.failed
    assert set(sweep.specs) == {"full", "loo_Z00", "loo_Z01", "loo_Z02"}
    assert sweep.specs["loo_Z01"]["exclude_zones"] == ["Z01"]


def test_loo_needs_three_zones():
    tables, _ = generate_panel(DgpConfig(seed=1, n_zones=2, spec=MINIMAL))
    with pytest.raises(Exception, match="at least 3"):
        leave_one_out(MINIMAL, tables)


def test_loo_zero_observation_zone_is_noop(panel):
    m = panel.metrics.copy()
    gone = "Z03"
    m.loc[(m.zone == gone) & (m.technology == "wind"), "vf"] = np.nan
    tables = panel.with_metrics(m)
    sweep = leave_one_out(ModelSpec(), tables, zones=[gone])
    full = sweep.table[sweep.table.run_id == "full"].set_index("coefficient")
    run = sweep.table[sweep.table.run_id == f"loo_{gone}"].set_index("coefficient")
    np.testing.assert_array_equal(run["estimate"], full["estimate"])
    np.testing.assert_array_equal(run["se"], full["se"])


def test_loo_failed_runs_recorded():
    spec = MINIMAL.replace(neighbors=True, controls=("hydro_pumped",))
    tables, _ = generate_panel(DgpConfig(seed=2, n_zones=4, spec=spec))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sweep = leave_one_out(spec, tables)
    assert len(sweep.failed) == 4
    failed = sweep.table[sweep.table.status != "ok"]
    assert failed.status.str.startswith("failed").all()
    assert (failed.n_obs == 0).all()
    assert sweep.summary["failed"] == 4


def test_loo_keeps_spatial_lags(panel):
    sweep = leave_one_out(ModelSpec(), panel, zones=["Z00"], coefficients=["domestic_wind"])
    direct = fit(ModelSpec(), panel, exclude_zones=["Z00"])
    est = sweep.table.set_index("run_id").loc["loo_Z00", "estimate"]
    assert est == direct.params["domestic_wind"]


def test_loo_parallel_matches_serial(panel):
    a = leave_one_out(ModelSpec(), panel, zones=["Z01", "Z02", "Z05"], workers=1)
    b = leave_one_out(ModelSpec(), panel, zones=["Z01", "Z02", "Z05"], workers=3)
    pd.testing.assert_frame_equal(a.table, b.table)


def test_loo_write(panel, tmp_path):
    sweep = leave_one_out(ModelSpec(), panel, zones=["Z01"])
    csv, meta = sweep.write(tmp_path)
    frame = pd.read_csv(csv)
    assert list(frame.columns) == [c if c != "variant" else "omitted_zone" for c in SWEEP_COLUMNS]
    doc = json.loads(meta.read_text())
    assert doc["sweep"] == "loo" and "share_inside_full_ci" in doc["summary"]


# --------------------------------------------------------------------------- #
# weights
# --------------------------------------------------------------------------- #


def _matched_topology(tables, seed=0):
    zones = list(tables.topology.zones)
    rng = np.random.default_rng(seed)
    pairs = [(zones[k], zones[k + 1]) for k in range(0, len(zones) - 1, 2)]
    topo = ZoneTopology(
        zones=tables.topology.zones,
        neighbors=frozenset(frozenset(p) for p in pairs),
        lifecycle=tables.topology.lifecycle,
        first_sample_year=tables.topology.first_sample_year,
    )
    rows = []
    for a, b in pairs:
        cap = rng.uniform(100, 1000)
        rows += [(a, b, cap), (b, a, cap)]
    ic = pd.DataFrame(rows, columns=["from_zone", "to_zone", "ic_mw"])
    return dataclasses.replace(tables, topology=topo, interconnectors=ic)


def test_single_neighbor_schemes_coincide(panel):
    tables = _matched_topology(panel)
    sweep = weights_variant(ModelSpec(), tables)
    wide = paired(sweep.table)
    np.testing.assert_array_equal(wide["ic_weighted"], wide["binary_uniform"])


def test_weights_independent_ic_small_shift():
    z = []
    for seed in range(20):
        tables, _ = generate_panel(DgpConfig(seed=seed, ic_level_correlation=0.0))
        row = paired(weights_variant(ModelSpec(), tables).table).loc["neighboring_wind"]
        z.append((row.binary_uniform - row.ic_weighted) / row.ic_weighted_se)
    z = np.array(z)
    assert np.mean(np.abs(z) < 2) >= 0.75
    assert abs(z.mean()) < 0.75


def test_weights_correlated_ic_direction():
    for seed in range(6):
        tables, _ = generate_panel(DgpConfig(seed=seed, ic_level_correlation=1.0))
        row = paired(weights_variant(ModelSpec(), tables).table).loc["neighboring_wind"]
        assert abs(row.binary_uniform) > abs(row.ic_weighted), seed


# --------------------------------------------------------------------------- #
# estimators
# --------------------------------------------------------------------------- #


def test_estimator_comparison(panel):
    sweep = estimator_comparison(ModelSpec(), panel)
    assert sweep.summary["max_relative_deviation"] <= 1e-6
    assert set(sweep.summary["rewb_only"]) >= {"intercept", "interconnector", "domestic_wind_mean"}
    fe = sweep.table[sweep.table.run_id == "fe"]
    fe_means = fe.coefficient[fe.coefficient.str.endswith("_mean")]
    assert fe_means.str.contains(":").all()
    assert len(sweep.summary["deviation"]) == 9 + 11


def test_estimator_comparison_solar():
    spec = ModelSpec(technology="solar")
    tables, _ = generate_panel(DgpConfig(seed=3, n_zones=14, spec=spec))
    assert estimator_comparison(spec, tables).summary["max_relative_deviation"] <= 1e-6


def test_relative_deviation():
    np.testing.assert_array_equal(relative_deviation([1.0, 0.0, -2.0], [1.0, 0.0, -1.0]), [0.0, 0.0, 0.5])


# --------------------------------------------------------------------------- #
# aggregation
# --------------------------------------------------------------------------- #


@pytest.fixture(scope="module")
def market():
    return generate_hourly(MeritOrderConfig(n_zones=5, years=2, seed=4))


SMALL = ModelSpec(cross_technology=False, controls=("hydro_pumped", "gas_coal_ratio"))


def test_hourly_null(market):
    check = hourly_null_check(SMALL, market.store, market.topology, market.fuel, market.hydro)
    assert check["max_vf_deviation"] <= 1e-10
    assert check["max_abs_slope"] <= 1e-10
    assert "domestic_wind" in check["coefficients"]


def test_aggregation_sweep(market, caplog):
    cache = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sweep = aggregation_sweep(SMALL, market.store, market.topology, market.fuel, market.hydro, cache=cache)
    assert list(sweep.table.run_id.unique()) == ["daily", "monthly", "annual"]
    n = sweep.table.drop_duplicates("run_id").set_index("run_id")["n_obs"]
    assert n["daily"] > n["monthly"]
    assert set(cache) == {"daily", "monthly", "annual", "hourly"}
    assert sweep.summary["hourly"]["max_abs_slope"] <= 1e-10
    # 5 zones x 2 years cannot carry the design; the run is recorded as failed
    assert sweep.failed == ["annual"]


def test_aggregation_single_year_drops_annual(caplog):
    m = generate_hourly(MeritOrderConfig(n_zones=4, years=1, seed=6))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sweep = aggregation_sweep(
            MINIMAL, m.store, m.topology, m.fuel, m.hydro, levels=("monthly", "annual"), hourly_check=False
        )
    assert "annual" in sweep.failed
    assert sweep.summary["dropped_zones"] == {"monthly": []} or "annual" not in sweep.summary["dropped_zones"]
    assert "fewer than 2 periods" in caplog.text


def test_aggregation_unknown_level(market):
    with pytest.raises(ConfigError):
        aggregation_sweep(SMALL, market.store, market.topology, levels=("weekly",))


def test_within_type_sets():
    assert WITHIN_TYPE == {"within", "interaction"}
