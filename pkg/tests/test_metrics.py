import math

import numpy as np
import pandas as pd
import pytest

import oracles
from conftest import exchange_frame, hourly_frame, make_topology
from spillover.errors import DataError
from spillover.ingest import HourlyStore
from spillover.metrics import (
    ExcludedObservation,
    MetricsTables,
    Thresholds,
    build_tables,
    clean_fuel_ratio,
    coefficient_of_variation,
    interconnector_proxy,
    load_correlation,
    market_value,
    penetration,
    quantile95,
    value_factor,
)


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


class TestScalarMetrics:
    def test_market_value_two_points(self):
        assert market_value([10, 20], [1, 3]) == 17.5

    def test_market_value_flat_generation(self):
        p = np.random.default_rng(0).uniform(-5, 80, 30)
        assert market_value(p, np.full(30, 7.0)) == pytest.approx(p.mean(), rel=1e-14)

    def test_market_value_insufficient(self):
        with pytest.raises(ExcludedObservation, match="insufficient generation"):
            market_value([1, 2], [0, 0])

    def test_value_factor_cases(self):
        assert value_factor(market_value([5, 9, 13], [2, 2, 2]), [5, 9, 13]) == 1.0
        assert value_factor(market_value([1, 2, 3], [1, 0, 0]), [1, 2, 3]) == 0.5
        with pytest.raises(ExcludedObservation, match="near zero"):
            value_factor(1.0, [1e-9, -1e-9])

    def test_value_factor_scale_invariance(self):
        rng = np.random.default_rng(1)
        p, g = rng.uniform(1, 100, 50), rng.uniform(0, 10, 50)
        base = value_factor(market_value(p, g), p)
        for k in (2.0, 0.5, 4.0):
            assert value_factor(market_value(k * p, g), k * p) == base

    def test_penetration(self):
        load = np.array([3.0, 4.0, 5.0])
        assert penetration(load, load) == 1.0
        assert penetration(np.zeros(3), load) == 0.0
        with pytest.raises(ExcludedObservation):
            penetration([1, 1], [0, 0])

    def test_cov(self):
        assert coefficient_of_variation([4, 4, 4]) == 0.0
        assert coefficient_of_variation([0, 2]) == 1.0
        with pytest.raises(ExcludedObservation):
            coefficient_of_variation([0, 0])

    def test_load_correlation(self):
        load = np.array([1.0, 4.0, 2.0, 8.0])
        assert load_correlation(load, load) == pytest.approx(1.0, abs=1e-15)
        assert load_correlation(-load + 3, load) == pytest.approx(-1.0, abs=1e-15)
        with pytest.raises(ExcludedObservation, match="constant"):
            load_correlation([2, 2, 2, 2], load)

    @pytest.mark.parametrize("seed", range(20))
    def test_against_oracles(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(24, 745))
        p = rng.normal(50, 20, n)
        g = rng.gamma(2.0, 100.0, n)
        c = rng.uniform(500, 1500, n)
        m = market_value(p, g)
        assert rel(m, oracles.mv(p, g)) <= 1e-12
        assert rel(value_factor(m, p), oracles.vf(p, g)) <= 1e-12
        assert rel(penetration(g, c), oracles.penetration(g, c)) <= 1e-12
        assert rel(coefficient_of_variation(g), oracles.cov(g)) <= 1e-12
        assert rel(load_correlation(g, c), oracles.corr(g, c)) <= 1e-12
        assert rel(quantile95(np.abs(p)), oracles.q95(np.abs(p))) <= 1e-12

    def test_quantile95_known(self):
        assert quantile95(np.arange(1, 101)) == pytest.approx(95.05, abs=1e-12)
        assert quantile95(np.full(10, 3.5)) == 3.5


class TestCleanFuelRatio:
    def test_cases(self):
        assert clean_fuel_ratio(20, 20, 0) == 1.0
        assert clean_fuel_ratio(30, 10, 10, 0.2, 0.4) == pytest.approx(32 / 14, rel=1e-15)

    def test_monotone_in_eua(self):
        r = clean_fuel_ratio(np.full(5, 25.0), np.full(5, 10.0), np.linspace(0, 100, 5))
        assert np.all(np.diff(r) < 0)

    def test_non_positive_denominator(self):
        with pytest.raises(DataError):
            clean_fuel_ratio(10, -5, 0)


def _store(frame, pairs=()):
    if pairs:
        start = frame.timestamp_utc.min().strftime("%Y-%m-%d")
        ex = exchange_frame(pairs, start=start, hours=int(frame.groupby("zone").size().max()))
    else:
        ex = pd.DataFrame({"zone_from": [], "zone_to": [], "timestamp_utc": pd.to_datetime([], utc=True), "net_export": []})
    return HourlyStore(frame, ex)


class TestInterconnectorProxy:
    def test_q95_and_normalization(self):
        topo = make_topology(["A", "B"], [("A", "B")])
        idx = pd.date_range("2019-01-01", periods=100, freq="h", tz="UTC")
        hourly = pd.DataFrame({"zone": np.repeat(["A", "B"], 100), "timestamp_utc": np.tile(idx, 2), "price": 1.0,
                               "wind_gen": 0.0, "solar_gen": 0.0, "load": np.r_[np.full(100, 190.1), np.full(100, 500.0)]})
        flows = np.arange(1, 101, dtype=float) * np.where(np.arange(100) % 2, 1, -1)
        ex = pd.DataFrame({"zone_from": "A", "zone_to": "B", "timestamp_utc": idx, "net_export": flows})
        pairs, zones = interconnector_proxy(HourlyStore(hourly, ex), topo)
        assert pairs.set_index(["from_zone", "to_zone"]).ic_mw.to_dict() == pytest.approx({("A", "B"): 95.05, ("B", "A"): 95.05})
        z = zones.set_index("zone")
        assert z.loc["A", "ic_normalized"] == pytest.approx(0.5, rel=1e-12)
        assert z.loc["B", "ic_normalized"] == pytest.approx(95.05 / 500, rel=1e-12)

    def test_constant_flow_and_missing_year(self):
        topo = make_topology(["A", "B", "C"], [("A", "B"), ("B", "C")])
        idx = pd.date_range("2019-01-01", periods=10, freq="h", tz="UTC")
        hourly = hourly_frame(["A", "B", "C"], hours=10)
        ex = pd.DataFrame({"zone_from": "A", "zone_to": "B", "timestamp_utc": idx, "net_export": -40.0})
        with pytest.warns(UserWarning, match="B-C"):
            pairs, _ = interconnector_proxy(HourlyStore(hourly, ex), topo)
        ic = pairs.set_index(["from_zone", "to_zone"]).ic_mw
        assert ic[("A", "B")] == 40.0
        assert ic[("B", "C")] == 0.0


def _month_store(zones=("A", "B"), months=2, seed=0):
    hours = sum(pd.Period(f"2019-{m + 1:02d}").days_in_month * 24 for m in range(months))
    return hourly_frame(list(zones), start="2019-01-01", hours=hours, seed=seed)


class TestBuildTables:
    def test_rows_match_oracles(self):
        frame = _month_store()
        topo = make_topology(["A", "B"], [("A", "B")])
        store = _store(frame, [("A", "B")])
        tables = build_tables(store, topo, "monthly")
        m = tables.metrics.set_index(["zone", "period", "technology"])
        assert len(m) == 2 * 2 * 2
        for (zone, period, tech), row in m.iterrows():
            sub = frame[(frame.zone == zone) & (frame.timestamp_utc.dt.strftime("%Y-%m") == period)]
            g, p, c = sub[f"{tech}_gen"].tolist(), sub.price.tolist(), sub.load.tolist()
            assert rel(row.mv, oracles.mv(p, g)) <= 1e-12
            assert rel(row.vf, oracles.vf(p, g)) <= 1e-12
            assert rel(row.penetration, oracles.penetration(g, c)) <= 1e-12
            assert rel(row["cov"], oracles.cov(g)) <= 1e-12
            assert rel(row.load_corr, oracles.corr(g, c)) <= 1e-12
            assert row.coverage == 1.0 and row.flag == ""

    def test_low_coverage_excluded(self):
        frame = _month_store(zones=("A",))
        frame = frame.drop(index=frame.index[:100])
        tables = build_tables(_store(frame), make_topology(["A"], []), "monthly")
        assert tables.metrics.period.unique().tolist() == ["2019-02"]
        assert tables.exclusions.reason.tolist() == ["coverage below minimum"]

    def test_insufficient_generation_keeps_penetration(self):
        frame = _month_store(zones=("A",), months=1).assign(solar_gen=0.0)
        tables = build_tables(_store(frame), make_topology(["A"], []), "monthly")
        solar = tables.metrics[tables.metrics.technology == "solar"].iloc[0]
        assert solar.flag == "insufficient generation"
        assert math.isnan(solar.vf) and math.isnan(solar.mv)
        assert solar.penetration == 0.0
        assert math.isnan(solar["cov"]) and math.isnan(solar.load_corr)

    def test_price_near_zero_flag(self):
        frame = _month_store(zones=("A",), months=1)
        frame["price"] = np.where(np.arange(len(frame)) % 2, 1e-8, -1e-8)
        tables = build_tables(_store(frame), make_topology(["A"], []), "monthly")
        assert set(tables.metrics.flag) == {"average price near zero"}
        assert tables.metrics.vf.isna().all() and tables.metrics.mv.notna().all()

    def test_hourly_vf_is_one(self):
        frame = _month_store(zones=("A",), months=1)
        tables = build_tables(_store(frame), make_topology(["A"], []), "hourly")
        m = tables.metrics
        assert len(m) == 2 * len(frame)
        assert set(m.loc[m.vf.isna(), "flag"]) <= {"insufficient generation"}
        vf = m.vf.dropna()
        assert np.abs(vf - 1).max() <= 1e-12

    def test_controls(self):
        frame = _month_store(zones=("A",), months=2)
        fuel = pd.DataFrame({"month": ["2019-01", "2019-02"], "gas": [20.0, 30.0], "coal": [10.0, 10.0], "eua": [10.0, 20.0]})
        hydro = pd.DataFrame({"zone": ["A"], "year": [2019], "pumped_mw": [100.0], "reservoir_mw": [0.0]})
        topo = make_topology(["A"], [])
        monthly = build_tables(_store(frame), topo, "monthly", fuel, hydro).controls
        expected = [(20 + 10 * 0.202) / (10 + 10 * 0.340), (30 + 20 * 0.202) / (10 + 20 * 0.340)]
        np.testing.assert_allclose(monthly.gas_coal_ratio, expected, rtol=1e-15)
        np.testing.assert_allclose(monthly.hydro_pumped, 100.0 / frame.load.mean(), rtol=1e-12)
        daily = build_tables(_store(frame), topo, "daily", fuel, hydro).controls
        assert daily.gas_coal_ratio.iloc[0] == pytest.approx(expected[0])
        annual = build_tables(_store(frame), topo, "annual", fuel, hydro)
        # partial year: coverage excludes it and months are missing anyway
        assert annual.controls.empty

    def test_annual_fuel_ratio_is_monthly_mean(self):
        frame = hourly_frame(["A"], start="2019-01-01", hours=8760)
        months = [f"2019-{m:02d}" for m in range(1, 13)]
        fuel = pd.DataFrame({"month": months, "gas": np.arange(12.0) + 20, "coal": 10.0, "eua": 0.0})
        tables = build_tables(_store(frame), make_topology(["A"], []), "annual", fuel)
        assert tables.controls.gas_coal_ratio.iloc[0] == pytest.approx(np.mean((np.arange(12.0) + 20) / 10), rel=1e-14)

    def test_write_read_round_trip(self, tmp_path):
        frame = _month_store()
        topo = make_topology(["A", "B"], [("A", "B")])
        tables = build_tables(_store(frame, [("A", "B")]), topo, "monthly")
        tables.write(tmp_path)
        back = MetricsTables.read(tmp_path)
        pd.testing.assert_frame_equal(back.metrics, tables.metrics)
        pd.testing.assert_frame_equal(back.zone_ic, tables.zone_ic)
        assert back.topology == topo and back.aggregation == "monthly"

    def test_thresholds(self):
        frame = _month_store(zones=("A",), months=1)
        frame.loc[frame.index[:200], "price"] = np.nan
        frame = frame.dropna()
        tables = build_tables(_store(frame), make_topology(["A"], []), "monthly", thresholds=Thresholds(min_coverage=0.5))
        assert len(tables.metrics) == 2
        assert tables.metrics.coverage.iloc[0] == pytest.approx((744 - 200) / 744)
