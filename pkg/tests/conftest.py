import os
import warnings
from datetime import date

import numpy as np
import pandas as pd
import pytest

from spillover.ingest import ZoneTopology, write_exchanges_csv, write_hourly_csv, write_topology


def make_topology(zones, pairs, start="2019-01-01", end=None, first_year=None):
    start = date.fromisoformat(start)
    end = date.fromisoformat(end) if end else None
    return ZoneTopology(
        zones=tuple(zones),
        neighbors=frozenset(frozenset(p) for p in pairs),
        lifecycle={z: (start, end) for z in zones},
        first_sample_year={z: first_year or start.year for z in zones},
    )


def hourly_frame(zones, start="2019-01-01", hours=48, seed=0):
    rng = np.random.default_rng(seed)
    index = pd.date_range(start, periods=hours, freq="h", tz="UTC")
    rows = []
    for zone in zones:
        rows.append(
            pd.DataFrame(
                {
                    "zone": zone,
                    "timestamp_utc": index,
                    "price": rng.uniform(10, 90, hours),
                    "wind_gen": rng.uniform(0, 400, hours),
                    "solar_gen": rng.uniform(0, 200, hours),
                    "load": rng.uniform(800, 1200, hours),
                }
            )
        )
    return pd.concat(rows, ignore_index=True)


def exchange_frame(pairs, start="2019-01-01", hours=48, seed=1):
    rng = np.random.default_rng(seed)
    index = pd.date_range(start, periods=hours, freq="h", tz="UTC")
    rows = [
        pd.DataFrame({"zone_from": a, "zone_to": b, "timestamp_utc": index, "net_export": rng.normal(0, 100, hours)})
        for a, b in pairs
    ]
    return pd.concat(rows, ignore_index=True)


@pytest.fixture
def write_inputs(tmp_path):
    """Write hourly/exchange/topology files; returns their paths."""

    def _write(hourly, exchanges, topology):
        h, e, t = tmp_path / "hourly.csv", tmp_path / "exchanges.csv", tmp_path / "topology.yaml"
        write_hourly_csv(hourly, h)
        write_exchanges_csv(exchanges, e)
        write_topology(topology, t)
        return h, e, t

    return _write


@pytest.fixture(autouse=True)
def _quiet_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


@pytest.fixture(scope="session")
def fixture_cache(tmp_path_factory):
    return tmp_path_factory.mktemp("spillover-cache")


@pytest.fixture(scope="session")
def bundled_fixture(fixture_cache):
    """Point the CLI cache at a per-session directory and build the fixture there once."""
    from spillover.cli import CACHE_ENV, fixture_dir

    old = os.environ.get(CACHE_ENV)
    os.environ[CACHE_ENV] = str(fixture_cache)
    try:
        yield fixture_dir()
    finally:
        if old is None:
            os.environ.pop(CACHE_ENV, None)
        else:
            os.environ[CACHE_ENV] = old


# -- acceptance report --------------------------------------------------------

ACCEPTANCE_IDS = [f"AC{k}" for k in range(1, 11)]
_acceptance: dict[str, str] = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion; returns the verdict."""

    def record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"{criterion} {'PASS' if ok else 'FAIL'}: {detail}"
        _acceptance[criterion] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in ACCEPTANCE_IDS:
        terminalreporter.write_line(_acceptance.get(criterion, f"{criterion} NOT RUN"))
