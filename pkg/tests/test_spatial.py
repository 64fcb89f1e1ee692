import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_topology
from spillover.errors import ConfigError
from spillover.spatial import build_weights, spatial_lag, weights_edgelist


def ic_frame(rows):
    return pd.DataFrame(rows, columns=["from_zone", "to_zone", "ic_mw"])


def pen(values: dict) -> pd.Series:
    """{zone: [p_t0, p_t1, ...]} -> Series indexed (zone, period)."""
    rows = [(z, f"2019-{t + 1:02d}", v) for z, vs in values.items() for t, v in enumerate(vs)]
    frame = pd.DataFrame(rows, columns=["zone", "period", "p"])
    return frame.set_index(["zone", "period"])["p"]


class TestWeights:
    def test_single_neighbor(self):
        topo = make_topology(["A", "B"], [("A", "B")])
        ic = ic_frame([("A", "B", 300.0), ("B", "A", 300.0)])
        for scheme in ("ic_weighted", "binary_uniform"):
            assert build_weights(topo, ic, scheme)["A"].weights == {"B": 1.0}

    def test_ic_proportional(self):
        topo = make_topology(["A", "B", "C"], [("A", "B"), ("A", "C")])
        ic = ic_frame([("A", "B", 300.0), ("A", "C", 100.0), ("B", "A", 1.0), ("C", "A", 1.0)])
        assert build_weights(topo, ic)["A"].weights == {"B": 0.75, "C": 0.25}

    def test_binary_four_neighbors(self):
        topo = make_topology(list("ABCDE"), [("A", z) for z in "BCDE"])
        w = build_weights(topo, None, "binary_uniform")["A"].weights
        assert w == {z: 0.25 for z in "BCDE"}

    def test_isolated_zone(self, caplog):
        topo = make_topology(["A", "B", "C"], [("A", "B")])
        w = build_weights(topo, None, "binary_uniform")
        assert not w["C"].defined
        assert "no usable neighbors" in caplog.text

    def test_zero_capacity_is_undefined(self):
        topo = make_topology(["A", "B"], [("A", "B")])
        w = build_weights(topo, ic_frame([("A", "B", 0.0), ("B", "A", 5.0)]))
        assert not w["A"].defined and w["B"].weights == {"A": 1.0}

    def test_bad_scheme(self):
        with pytest.raises(ConfigError):
            build_weights(make_topology(["A"], []), None, "inverse_distance")
        with pytest.raises(ConfigError, match="needs interconnector"):
            build_weights(make_topology(["A"], []), None, "ic_weighted")

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 8), st.data())
    def test_row_normalized_over_adjacent(self, n, data):
        zones = [f"Z{k}" for k in range(n)]
        all_pairs = [(a, b) for i, a in enumerate(zones) for b in zones[i + 1:]]
        pairs = data.draw(st.lists(st.sampled_from(all_pairs), unique=True))
        caps = data.draw(st.lists(st.floats(0, 1e4), min_size=2 * len(pairs), max_size=2 * len(pairs)))
        rows = [(a, b, caps[2 * k]) for k, (a, b) in enumerate(pairs)] + [(b, a, caps[2 * k + 1]) for k, (a, b) in enumerate(pairs)]
        topo = make_topology(zones, pairs)
        for scheme in ("ic_weighted", "binary_uniform"):
            for zone, sw in build_weights(topo, ic_frame(rows), scheme).items():
                assert all(topo.adjacent(zone, j) for j in sw.weights)
                assert all(v >= 0 for v in sw.weights.values())
                if sw.defined:
                    assert math.isclose(sum(sw.weights.values()), 1.0, rel_tol=1e-12)


class TestLag:
    def setup_method(self):
        self.topo = make_topology(["A", "B", "C"], [("A", "B"), ("A", "C")])
        self.ic = ic_frame([("A", "B", 300.0), ("A", "C", 100.0), ("B", "A", 50.0), ("C", "A", 50.0)])

    def test_constant_neighbors(self):
        w = build_weights(self.topo, self.ic)
        lag = spatial_lag(w, pen({"A": [0.9, 0.9], "B": [0.3, 0.3], "C": [0.3, 0.3]}))
        assert lag.loc["A"].tolist() == pytest.approx([0.3, 0.3], abs=1e-15)

    def test_arithmetic(self):
        w = build_weights(self.topo, self.ic)
        lag = spatial_lag(w, pen({"A": [0.0], "B": [0.2], "C": [0.4]}))
        assert lag.loc[("A", "2019-01")] == pytest.approx(0.25, abs=1e-15)
        assert lag.loc[("B", "2019-01")] == 0.0
        assert lag.name == "neighbor_penetration"

    def test_single_neighbor_copies(self):
        w = build_weights(self.topo, self.ic)
        lag = spatial_lag(w, pen({"A": [0.1, 0.7], "B": [0.2, 0.3], "C": [0.4, 0.5]}))
        assert lag.loc["B"].tolist() == [0.1, 0.7]

    def test_missing_neighbor_value(self):
        w = build_weights(self.topo, self.ic)
        lag = spatial_lag(w, pen({"A": [0.1, 0.1], "B": [0.2, np.nan], "C": [0.4, 0.4]}))
        assert np.isnan(lag.loc[("A", "2019-02")])
        assert lag.loc[("A", "2019-01")] == pytest.approx(0.25)

    def test_absent_neighbor_zone(self):
        w = build_weights(self.topo, self.ic)
        lag = spatial_lag(w, pen({"A": [0.1], "B": [0.2]}))
        assert np.isnan(lag.loc[("A", "2019-01")])

    def test_edgelist(self):
        edges = weights_edgelist(build_weights(self.topo, self.ic))
        assert edges.columns.tolist() == ["focal", "neighbor", "weight", "scheme"]
        assert len(edges) == 4
