"""Loading and validation of hourly zonal market data and zone topology.

File formats
------------
Hourly CSV: ``zone,timestamp_utc,price,wind_gen,solar_gen,load``.
Exchange CSV: ``zone_from,zone_to,timestamp_utc,net_export`` (positive = export
from ``zone_from`` to ``zone_to``).
Fuel prices CSV: ``month,gas,coal,eua``.
Hydro capacities CSV: ``zone,year,pumped_mw,reservoir_mw``.
Topology: YAML document with ``zones`` (lifecycle + first sample year) and
``neighbors`` (list of unordered pairs).
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from spillover.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

HOURLY_COLUMNS = ["zone", "timestamp_utc", "price", "wind_gen", "solar_gen", "load"]
EXCHANGE_COLUMNS = ["zone_from", "zone_to", "timestamp_utc", "net_export"]
FUEL_COLUMNS = ["month", "gas", "coal", "eua"]
HYDRO_COLUMNS = ["zone", "year", "pumped_mw", "reservoir_mw"]

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
_MAX_REPORTED = 5


def _as_date(value, what: str) -> date | None:
    if value is None:
        return None
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value))
    except ValueError as exc:
        raise ConfigError(f"{what}: invalid date {value!r}") from exc


@dataclass(frozen=True)
class ZoneTopology:
    """Bidding zones, their lifecycle, adjacency and first sample year.

    ``lifecycle`` maps zone -> (start, end); ``end`` may be None (still active)
    and is inclusive.
    """

    zones: tuple[str, ...]
    neighbors: frozenset[frozenset[str]]
    lifecycle: Mapping[str, tuple[date, date | None]]
    first_sample_year: Mapping[str, int]

    def __post_init__(self):
        zones = set(self.zones)
        if len(zones) != len(self.zones):
            raise ConfigError("duplicate zone ids in topology")
        for pair in self.neighbors:
            if len(pair) != 2:
                raise ConfigError(f"self-pair or malformed neighbor pair: {sorted(pair)}")
            unknown = pair - zones
            if unknown:
                raise ConfigError(f"neighbor pair references unknown zone(s) {sorted(unknown)}")
        for zone in self.zones:
            if zone not in self.lifecycle:
                raise ConfigError(f"zone {zone} has no lifecycle")
            start, end = self.lifecycle[zone]
            if end is not None and end < start:
                raise ConfigError(f"zone {zone}: lifecycle end before start")
            year = self.first_sample_year.get(zone)
            if year is None:
                raise ConfigError(f"zone {zone} has no first_sample_year")
            if year < start.year or (end is not None and year > end.year):
                raise ConfigError(
                    f"zone {zone}: first_sample_year {year} outside lifecycle "
                    f"{start.isoformat()}..{end.isoformat() if end else 'open'}"
                )

    @classmethod
    def from_dict(cls, doc: Mapping) -> ZoneTopology:
        try:
            zone_docs = doc["zones"]
        except (KeyError, TypeError) as exc:
            raise ConfigError("topology document needs a 'zones' mapping") from exc
        zones, lifecycle, first_year = [], {}, {}
        for zone, spec in zone_docs.items():
            zone = str(zone)
            spec = spec or {}
            start = _as_date(spec.get("start"), f"zone {zone} start")
            if start is None:
                raise ConfigError(f"zone {zone}: missing start date")
            end = _as_date(spec.get("end"), f"zone {zone} end")
            zones.append(zone)
            lifecycle[zone] = (start, end)
            first_year[zone] = int(spec.get("first_sample_year", start.year))
        pairs = set()
        for raw in doc.get("neighbors", []) or []:
            if len(raw) != 2:
                raise ConfigError(f"neighbor entry must be a pair, got {raw!r}")
            a, b = str(raw[0]), str(raw[1])
            if a == b:
                raise ConfigError(f"self-pair in neighbors: {a}")
            pairs.add(frozenset((a, b)))
        return cls(tuple(zones), frozenset(pairs), lifecycle, first_year)

    def to_dict(self) -> dict:
        zones = {}
        for zone in self.zones:
            start, end = self.lifecycle[zone]
            zones[zone] = {
                "start": start.isoformat(),
                "end": end.isoformat() if end else None,
                "first_sample_year": int(self.first_sample_year[zone]),
            }
        pairs = sorted(sorted(p) for p in self.neighbors)
        return {"zones": zones, "neighbors": [list(p) for p in pairs]}

    def neighbors_of(self, zone: str) -> tuple[str, ...]:
        return tuple(sorted(next(iter(p - {zone})) for p in self.neighbors if zone in p))

    def adjacent(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.neighbors

    def active(self, zone: str, timestamps: pd.Series) -> np.ndarray:
        """Boolean mask: timestamps (UTC) inside the zone lifecycle."""
        start, end = self.lifecycle[zone]
        ts = pd.DatetimeIndex(timestamps)
        lo = pd.Timestamp(start, tz="UTC")
        mask = ts >= lo
        if end is not None:
            mask &= ts < pd.Timestamp(end, tz="UTC") + pd.Timedelta(days=1)
        return np.asarray(mask)

    def without(self, zones: Iterable[str]) -> ZoneTopology:
        drop = set(zones)
        keep = tuple(z for z in self.zones if z not in drop)
        return ZoneTopology(
            keep,
            frozenset(p for p in self.neighbors if not (p & drop)),
            {z: self.lifecycle[z] for z in keep},
            {z: self.first_sample_year[z] for z in keep},
        )


def load_topology(path: str | Path) -> ZoneTopology:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"topology file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"topology file {path}: {exc}") from exc
    return ZoneTopology.from_dict(doc)


def write_topology(topology: ZoneTopology, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(topology.to_dict(), sort_keys=False))


# --------------------------------------------------------------------------- #
# CSV parsing helpers
# --------------------------------------------------------------------------- #


def _read_csv(path: Path, columns: Sequence[str], string_cols: Sequence[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(
            path,
            dtype={c: str for c in string_cols},
            float_precision="round_trip",
            keep_default_na=False,
            na_values=[""],
        )
    except FileNotFoundError as exc:
        raise DataError(f"input file not found: {path}") from exc
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: unparseable CSV ({exc})") from exc
    if list(frame.columns) != list(columns):
        raise DataError(f"{path}: header must be {','.join(columns)}, got {','.join(map(str, frame.columns))}")
    frame["_line"] = np.arange(len(frame), dtype=np.int64) + 2
    frame["_file"] = str(path)
    return frame


def _numeric(frame: pd.DataFrame, cols: Sequence[str], path: Path) -> None:
    bad = np.zeros(len(frame), dtype=bool)
    for col in cols:
        converted = pd.to_numeric(frame[col], errors="coerce")
        bad |= converted.isna().to_numpy() | ~np.isfinite(converted.to_numpy(dtype=float, na_value=np.nan))
        frame[col] = converted.astype(float)
    if bad.any():
        lines = frame.loc[bad, "_line"].tolist()
        raise DataError(f"{path}: malformed row(s) at line(s) {lines[:_MAX_REPORTED]}")


_OFFSET_RE = r"(?:Z|[+-]\d{2}:?\d{2})$"
_UTC_OFFSETS = ("Z", "+00:00", "+0000", "-00:00", "-0000")


def _to_utc(values: pd.Series, **kwargs) -> pd.Series:
    # Hourly files repeat each timestamp once per zone; parse the distinct strings only.
    codes, uniques = pd.factorize(values)
    parsed = pd.DatetimeIndex(pd.to_datetime(uniques, utc=True, errors="coerce", **kwargs))
    return pd.Series(parsed.take(codes, allow_fill=True, fill_value=pd.NaT), index=values.index)


def _parse_timestamps(frame: pd.DataFrame, path: Path) -> pd.Series:
    # Fast path: every row in the canonical "...Z" form.
    fast = _to_utc(frame["timestamp_utc"], format=TIMESTAMP_FORMAT)
    if not fast.isna().any() and (fast == fast.dt.floor("h")).all():
        return fast
    raw = frame["timestamp_utc"].fillna("").str.strip()
    aware = raw.str.contains(_OFFSET_RE, regex=True).to_numpy()
    if aware.any() and not aware.all():
        lines = frame.loc[~aware, "_line"].tolist()
        raise DataError(
            f"{path}: timezone-ambiguous timestamps (naive and offset-qualified mixed) at line(s) "
            f"{lines[:_MAX_REPORTED]}"
        )
    if aware.any():
        utc = np.zeros(len(raw), dtype=bool)
        for suffix in _UTC_OFFSETS:
            utc |= raw.str.endswith(suffix).to_numpy()
        if not utc.all():
            lines = frame.loc[~utc, "_line"].tolist()
            raise DataError(f"{path}: non-UTC offset in timestamp_utc at line(s) {lines[:_MAX_REPORTED]}")
    parsed = _to_utc(raw, format="ISO8601")
    bad = parsed.isna().to_numpy()
    if bad.any():
        lines = frame.loc[bad, "_line"].tolist()
        raise DataError(f"{path}: malformed timestamp at line(s) {lines[:_MAX_REPORTED]}")
    not_hour = (parsed != parsed.dt.floor("h")).to_numpy()
    if not_hour.any():
        lines = frame.loc[not_hour, "_line"].tolist()
        raise DataError(f"{path}: timestamp not on the hour at line(s) {lines[:_MAX_REPORTED]}")
    return parsed


def _check_zones(values: pd.Series, topology: ZoneTopology, frame: pd.DataFrame, path: Path) -> None:
    unknown = ~values.isin(topology.zones).to_numpy()
    if unknown.any():
        lines = frame.loc[unknown, "_line"].tolist()
        names = sorted(set(values[unknown]))
        raise DataError(f"{path}: unknown zone id(s) {names} at line(s) {lines[:_MAX_REPORTED]}")


def _duplicate_error(frame: pd.DataFrame, keys: list[str]) -> None:
    dup = frame.duplicated(keys, keep=False)
    if not dup.any():
        return
    rows = frame.loc[dup].sort_values(keys + ["_file", "_line"])
    first_key = tuple(rows.iloc[0][k] for k in keys)
    same = rows[(rows[keys] == pd.Series(first_key, index=keys)).all(axis=1)]
    where = [f"{f}:{n}" for f, n in zip(same["_file"], same["_line"])]
    shown = tuple(str(k) for k in first_key)
    raise DataError(f"duplicate {'/'.join(keys)} {shown} at {' and '.join(where)}")


# --------------------------------------------------------------------------- #
# Store
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class LoadReport:
    rows: dict[str, int]
    gaps: dict[str, int]
    exchange_rows: int
    rejections: pd.DataFrame = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "rows": dict(self.rows),
            "gaps": dict(self.gaps),
            "exchange_rows": int(self.exchange_rows),
            "rejections": [
                {k: (str(v) if k == "timestamp_utc" else v) for k, v in rec.items()}
                for rec in self.rejections.to_dict("records")
            ],
        }


@dataclass(frozen=True)
class HourlyStore:
    """Validated hourly records keyed by (zone, hour), plus border exchanges.

    ``hourly`` is sorted by zone then timestamp; ``exchanges`` holds one row per
    (zone_from, zone_to, hour) with ``zone_from < zone_to`` lexically.  Treat
    both frames as read-only.
    """

    hourly: pd.DataFrame
    exchanges: pd.DataFrame

    @property
    def zones(self) -> list[str]:
        return sorted(self.hourly["zone"].unique())

    def series(self, zone: str) -> pd.DataFrame:
        return self.hourly[self.hourly["zone"] == zone].set_index("timestamp_utc")

    def record(self, zone: str, timestamp) -> pd.Series:
        ts = pd.Timestamp(timestamp)
        ts = ts.tz_localize("UTC") if ts.tzinfo is None else ts.tz_convert("UTC")
        hit = self.hourly[(self.hourly["zone"] == zone) & (self.hourly["timestamp_utc"] == ts)]
        if hit.empty:
            raise KeyError((zone, ts))
        return hit.iloc[0]

    def write(self, directory: str | Path) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        hourly_path = directory / "hourly.csv"
        exchange_path = directory / "exchanges.csv"
        write_hourly_csv(self.hourly, hourly_path)
        write_exchanges_csv(self.exchanges, exchange_path)
        return hourly_path, exchange_path


def _format_ts(ts: pd.Series) -> pd.Series:
    return ts.dt.strftime(TIMESTAMP_FORMAT)


def write_hourly_csv(frame: pd.DataFrame, path: str | Path) -> None:
    out = frame[HOURLY_COLUMNS].copy()
    out["timestamp_utc"] = _format_ts(out["timestamp_utc"])
    out.to_csv(path, index=False, lineterminator="\n")


def write_exchanges_csv(frame: pd.DataFrame, path: str | Path) -> None:
    out = frame[EXCHANGE_COLUMNS].copy()
    out["timestamp_utc"] = _format_ts(out["timestamp_utc"])
    out.to_csv(path, index=False, lineterminator="\n")


def _gap_count(ts: pd.Series) -> int:
    if len(ts) < 2:
        return 0
    span = int((ts.iloc[-1] - ts.iloc[0]) / pd.Timedelta(hours=1)) + 1
    return span - len(ts)


def load_dataset(
    hourly_paths: Iterable[str | Path],
    exchange_paths: Iterable[str | Path],
    topology: ZoneTopology,
) -> tuple[HourlyStore, LoadReport]:
    """Read, validate and index hourly data and exchanges.

    Rows outside a zone's lifecycle, with negative generation or with
    non-positive load are rejected and listed in the report.  Malformed
    rows, duplicate keys, unknown zones and timezone-ambiguous timestamps
    raise :class:`DataError`.
    """
    frames = []
    for path in map(Path, hourly_paths):
        frame = _read_csv(path, HOURLY_COLUMNS, ["zone", "timestamp_utc"])
        _numeric(frame, ["price", "wind_gen", "solar_gen", "load"], path)
        frame["timestamp_utc"] = _parse_timestamps(frame, path)
        _check_zones(frame["zone"], topology, frame, path)
        frames.append(frame)
    if not frames:
        raise DataError("no hourly input files given")
    hourly = pd.concat(frames, ignore_index=True)
    _duplicate_error(hourly, ["zone", "timestamp_utc"])

    rejected = []
    keep = np.ones(len(hourly), dtype=bool)
    for zone, idx in hourly.groupby("zone", sort=True).groups.items():
        inside = topology.active(zone, hourly.loc[idx, "timestamp_utc"])
        keep[np.asarray(idx)[~inside]] = False
    reasons = np.where(~keep, "outside zone lifecycle", "")
    neg = (hourly["wind_gen"] < 0) | (hourly["solar_gen"] < 0)
    reasons = np.where(keep & neg.to_numpy(), "negative generation", reasons)
    keep &= ~neg.to_numpy()
    low = (hourly["load"] <= 0).to_numpy()
    reasons = np.where(keep & low, "non-positive load", reasons)
    keep &= ~low
    if (~keep).any():
        rej = hourly.loc[~keep, ["_file", "_line", "zone", "timestamp_utc"]].copy()
        rej["reason"] = reasons[~keep]
        rejected.append(rej.rename(columns={"_file": "file", "_line": "line"}))

    hourly = (
        hourly.loc[keep, HOURLY_COLUMNS]
        .sort_values(["zone", "timestamp_utc"], kind="mergesort")
        .reset_index(drop=True)
    )

    ex_frames = []
    for path in map(Path, exchange_paths):
        frame = _read_csv(path, EXCHANGE_COLUMNS, ["zone_from", "zone_to", "timestamp_utc"])
        _numeric(frame, ["net_export"], path)
        frame["timestamp_utc"] = _parse_timestamps(frame, path)
        _check_zones(frame["zone_from"], topology, frame, path)
        _check_zones(frame["zone_to"], topology, frame, path)
        ex_frames.append(frame)
    if ex_frames:
        ex = pd.concat(ex_frames, ignore_index=True)
        swap = (ex["zone_from"] > ex["zone_to"]).to_numpy()
        ex.loc[swap, ["zone_from", "zone_to"]] = ex.loc[swap, ["zone_to", "zone_from"]].to_numpy()
        ex.loc[swap, "net_export"] = -ex.loc[swap, "net_export"]
        _duplicate_error(ex, ["zone_from", "zone_to", "timestamp_utc"])
        ok = np.ones(len(ex), dtype=bool)
        why = np.full(len(ex), "", dtype=object)
        adjacent = np.array([topology.adjacent(a, b) for a, b in zip(ex["zone_from"], ex["zone_to"])], dtype=bool)
        why[~adjacent] = "border not in topology"
        ok &= adjacent
        for col in ("zone_from", "zone_to"):
            for zone, idx in ex.groupby(col, sort=True).groups.items():
                idx = np.asarray(idx)
                inside = topology.active(zone, ex.loc[idx, "timestamp_utc"])
                bad = idx[~inside & ok[idx]]
                why[bad] = "outside zone lifecycle"
                ok[bad] = False
        if (~ok).any():
            rej = ex.loc[~ok, ["_file", "_line", "zone_from", "timestamp_utc"]].copy()
            rej = rej.rename(columns={"_file": "file", "_line": "line", "zone_from": "zone"})
            rej["reason"] = why[~ok]
            rejected.append(rej)
        ex = (
            ex.loc[ok, EXCHANGE_COLUMNS]
            .sort_values(["zone_from", "zone_to", "timestamp_utc"], kind="mergesort")
            .reset_index(drop=True)
        )
    else:
        ex = pd.DataFrame({c: pd.Series(dtype=object if c.startswith("zone") else float) for c in EXCHANGE_COLUMNS})
        ex["timestamp_utc"] = pd.to_datetime(ex["timestamp_utc"], utc=True)

    rejections = (
        pd.concat(rejected, ignore_index=True)
        if rejected
        else pd.DataFrame(columns=["file", "line", "zone", "timestamp_utc", "reason"])
    )
    for rec in rejections.itertuples():
        logger.info("rejected %s:%s (%s): %s", rec.file, rec.line, rec.zone, rec.reason)

    rows, gaps = {}, {}
    for zone, grp in hourly.groupby("zone", sort=True):
        rows[zone] = int(len(grp))
        gaps[zone] = _gap_count(grp["timestamp_utc"])
    report = LoadReport(rows=rows, gaps=gaps, exchange_rows=int(len(ex)), rejections=rejections)
    return HourlyStore(hourly=hourly, exchanges=ex), report


# --------------------------------------------------------------------------- #
# Coverage
# --------------------------------------------------------------------------- #

AGGREGATION_FREQ = {"hourly": "h", "daily": "D", "monthly": "M", "annual": "Y"}


def hours_in_period(period: pd.Period) -> int:
    return int(round((period.end_time - period.start_time + pd.Timedelta(1, "ns")) / pd.Timedelta(hours=1)))


def _as_period(period) -> pd.Period:
    if isinstance(period, pd.Period):
        return period
    text = str(period)
    if len(text) == 4:
        return pd.Period(text, freq="Y")
    if len(text) == 7:
        return pd.Period(text, freq="M")
    if len(text) == 10:
        return pd.Period(text, freq="D")
    return pd.Period(text, freq="h")


def coverage(store: HourlyStore, zone: str, period) -> float:
    """Observed hours over hours in ``period`` (a calendar day, month or year)."""
    period = _as_period(period)
    start = pd.Timestamp(period.start_time, tz="UTC")
    stop = pd.Timestamp(period.end_time, tz="UTC")
    ts = store.hourly.loc[store.hourly["zone"] == zone, "timestamp_utc"]
    observed = int(((ts >= start) & (ts <= stop)).sum())
    return observed / hours_in_period(period)


# --------------------------------------------------------------------------- #
# Fuel prices and hydro capacities
# --------------------------------------------------------------------------- #


def read_fuel_prices(path: str | Path) -> pd.DataFrame:
    path = Path(path)
    frame = _read_csv(path, FUEL_COLUMNS, ["month"])
    _numeric(frame, ["gas", "coal", "eua"], path)
    months = pd.PeriodIndex(frame["month"].str.strip(), freq="M")
    if (frame[["gas", "coal", "eua"]] < 0).any().any():
        raise DataError(f"{path}: negative fuel or carbon price")
    if months.duplicated().any():
        raise DataError(f"{path}: duplicate month")
    order = np.argsort(months.asi8)
    months = months[order]
    if len(months) > 1 and not (np.diff(months.asi8) == 1).all():
        raise DataError(f"{path}: months are not contiguous")
    out = frame.iloc[order][["gas", "coal", "eua"]].reset_index(drop=True)
    out.insert(0, "month", months.astype(str))
    return out


def write_fuel_prices(frame: pd.DataFrame, path: str | Path) -> None:
    frame[FUEL_COLUMNS].to_csv(path, index=False, lineterminator="\n")


def read_hydro(path: str | Path, topology: ZoneTopology | None = None) -> pd.DataFrame:
    path = Path(path)
    frame = _read_csv(path, HYDRO_COLUMNS, ["zone"])
    _numeric(frame, ["year", "pumped_mw", "reservoir_mw"], path)
    if topology is not None:
        _check_zones(frame["zone"], topology, frame, path)
    if (frame[["pumped_mw", "reservoir_mw"]] < 0).any().any():
        raise DataError(f"{path}: negative hydro capacity")
    frame["year"] = frame["year"].astype(int)
    _duplicate_error(frame, ["zone", "year"])
    return frame[HYDRO_COLUMNS].sort_values(["zone", "year"]).reset_index(drop=True)


def write_hydro(frame: pd.DataFrame, path: str | Path) -> None:
    frame[HYDRO_COLUMNS].to_csv(path, index=False, lineterminator="\n")
