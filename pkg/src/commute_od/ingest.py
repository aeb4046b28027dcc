"""Raw ping ingestion: parse, validate, window-filter, dedupe and group by device."""

from __future__ import annotations

import csv
import gzip
import io
import os
import zlib
from array import array
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta, timezone
from functools import cached_property
from typing import Iterable, Iterator, NamedTuple, Optional, Union
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

import numpy as np

from .errors import ConfigError

REASON_FIELDS = "wrong field count"
REASON_DEVICE = "empty device id"
REASON_NUMBER = "unparsable number"
REASON_RANGE = "coordinate out of range"
REASON_WINDOW = "outside observation window"
REASON_DUPLICATE = "duplicate record"


def load_zone(timezone_id: str) -> ZoneInfo:
    try:
        return ZoneInfo(timezone_id)
    except (ZoneInfoNotFoundError, ValueError) as exc:
        raise ConfigError(f"unknown timezone {timezone_id!r}") from exc


@dataclass(frozen=True)
class ObservationWindow:
    """Half-open UTC interval [start_utc, end_utc) interpreted in a civil time zone."""

    start_utc: int
    end_utc: int
    timezone_id: str = "America/Chicago"

    def __post_init__(self):
        if self.start_utc >= self.end_utc:
            raise ConfigError("observation window must have start < end")
        load_zone(self.timezone_id)

    @classmethod
    def from_local_dates(cls, first: date, last: date, timezone_id: str = "America/Chicago") -> "ObservationWindow":
        """Window covering local calendar days ``first`` through ``last`` inclusive."""
        tz = load_zone(timezone_id)
        start = datetime.combine(first, time(0), tzinfo=tz)
        end = datetime.combine(last + timedelta(days=1), time(0), tzinfo=tz)
        return cls(int(start.timestamp()), int(end.timestamp()), timezone_id)

    @cached_property
    def tz(self) -> ZoneInfo:
        return load_zone(self.timezone_id)

    @cached_property
    def local_dates(self) -> tuple[date, ...]:
        first = to_local(self.start_utc, self).date
        last = to_local(self.end_utc - 1, self).date
        return tuple(first + timedelta(days=k) for k in range((last - first).days + 1))

    @cached_property
    def weekday_dates(self) -> frozenset[date]:
        return frozenset(d for d in self.local_dates if d.weekday() < 5)

    @property
    def weekday_count(self) -> int:
        return len(self.weekday_dates)

    def contains(self, ts: int) -> bool:
        return self.start_utc <= ts < self.end_utc


class LocalTime(NamedTuple):
    date: date
    hour: int
    minute: int
    weekday: int  # Monday == 0
    is_weekday: bool
    dt: datetime


def to_local(timestamp_utc: int, window_or_zone: Union[ObservationWindow, ZoneInfo, str]) -> LocalTime:
    """Civil wall-clock time (DST aware) for a UTC epoch second."""
    if isinstance(window_or_zone, ObservationWindow):
        tz = window_or_zone.tz
    elif isinstance(window_or_zone, str):
        tz = load_zone(window_or_zone)
    else:
        tz = window_or_zone
    dt = datetime.fromtimestamp(timestamp_utc, tz=timezone.utc).astimezone(tz)
    wd = dt.weekday()
    return LocalTime(dt.date(), dt.hour, dt.minute, wd, wd < 5, dt)


@dataclass(frozen=True)
class PingSchema:
    delimiter: str = ","
    device_col: str = "device_id"
    lat_col: str = "latitude"
    lon_col: str = "longitude"
    ts_col: str = "timestamp"


@dataclass
class IngestReport:
    input_rows: int = 0
    accepted: int = 0
    rejected: Counter = field(default_factory=Counter)

    @property
    def rejected_total(self) -> int:
        return sum(self.rejected.values())

    def to_dict(self) -> dict:
        return {
            "input_rows": self.input_rows,
            "accepted": self.accepted,
            "rejected_total": self.rejected_total,
            "rejected_by_reason": dict(sorted(self.rejected.items())),
        }


@dataclass
class Trajectories:
    """Concatenated per-device trajectories.

    Device ``k`` owns rows ``offsets[k]:offsets[k+1]`` of ``lat``/``lon``/``ts``;
    devices are sorted by id and each device's rows ascend by timestamp.
    """

    device_ids: list[str]
    offsets: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    ts: np.ndarray

    def __len__(self) -> int:
        return len(self.device_ids)

    @property
    def n_pings(self) -> int:
        return int(self.offsets[-1]) if len(self.offsets) else 0

    def device(self, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s = slice(int(self.offsets[k]), int(self.offsets[k + 1]))
        return self.lat[s], self.lon[s], self.ts[s]

    def subset(self, indices: Iterable[int]) -> "Trajectories":
        idx = list(indices)
        if not idx:
            return Trajectories([], np.zeros(1, np.int64), np.empty(0), np.empty(0), np.empty(0, np.int64))
        lens = np.diff(self.offsets)[idx]
        take = np.concatenate([np.arange(self.offsets[k], self.offsets[k + 1]) for k in idx])
        return Trajectories(
            [self.device_ids[k] for k in idx],
            np.concatenate([[0], np.cumsum(lens)]).astype(np.int64),
            self.lat[take],
            self.lon[take],
            self.ts[take],
        )

    @classmethod
    def empty(cls) -> "Trajectories":
        return cls([], np.zeros(1, np.int64), np.empty(0), np.empty(0), np.empty(0, np.int64))


def shard_of(device_id: str, n_shards: int) -> int:
    """Stable device -> shard assignment (independent of process hash seeds)."""
    return zlib.crc32(device_id.encode("utf-8")) % n_shards


def open_text(path: Union[str, os.PathLike]) -> io.TextIOBase:
    path = os.fspath(path)
    try:
        if path.endswith(".gz"):
            return gzip.open(path, "rt", newline="", encoding="utf-8")
        return open(path, "r", newline="", encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _parse_ts(s: str) -> int:
    try:
        return int(s)
    except ValueError:
        v = float(s)
        if not v.is_integer():
            raise
        return int(v)


def parse_pings(
    source: Union[str, os.PathLike, Iterable[str]],
    schema: PingSchema = PingSchema(),
    window: Optional[ObservationWindow] = None,
) -> tuple[Trajectories, IngestReport]:
    """Read a headered ping CSV into per-device, time-ordered trajectories.

    ``source`` is a path (``.gz`` handled transparently) or an iterable of
    text lines. Malformed rows are counted by reason and skipped; only a
    missing header column or an unreadable file is fatal.
    """
    if isinstance(source, (str, os.PathLike)):
        with open_text(source) as fh:
            try:
                return _parse(fh, schema, window)
            except (OSError, EOFError, UnicodeDecodeError, zlib.error) as exc:
                raise ConfigError(f"cannot read {os.fspath(source)}: {exc}") from exc
    return _parse(source, schema, window)


def _parse(lines: Iterable[str], schema: PingSchema, window: Optional[ObservationWindow]):
    report = IngestReport()
    reader = csv.reader(lines, delimiter=schema.delimiter)
    header = next(reader, None)
    if header is None:
        return Trajectories.empty(), report
    header = [h.strip() for h in header]
    cols = [schema.device_col, schema.lat_col, schema.lon_col, schema.ts_col]
    missing = [c for c in cols if c not in header]
    if missing:
        raise ConfigError(f"ping file lacks required column(s): {', '.join(missing)}")
    di, lai, loi, ti = (header.index(c) for c in cols)
    ncols = len(header)
    lo_t, hi_t = (window.start_utc, window.end_utc) if window else (-(2**63), 2**63 - 1)

    codes: dict[str, int] = {}
    dev = array("q")
    lats = array("d")
    lons = array("d")
    tss = array("q")
    rej = report.rejected
    nrows = 0
    for row in reader:
        nrows += 1
        if len(row) != ncols:
            if not row:
                nrows -= 1  # blank line, not a record
                continue
            rej[REASON_FIELDS] += 1
            continue
        d = row[di]
        if not d:
            rej[REASON_DEVICE] += 1
            continue
        try:
            la = float(row[lai])
            lo = float(row[loi])
            t = _parse_ts(row[ti])
        except ValueError:
            rej[REASON_NUMBER] += 1
            continue
        if not (-90.0 <= la <= 90.0 and -180.0 <= lo <= 180.0):
            rej[REASON_RANGE] += 1
            continue
        if not (lo_t <= t < hi_t):
            rej[REASON_WINDOW] += 1
            continue
        c = codes.get(d)
        if c is None:
            c = codes[d] = len(codes)
        dev.append(c)
        lats.append(la)
        lons.append(lo)
        tss.append(t)
    report.input_rows = nrows

    if not codes:
        report.accepted = 0
        return Trajectories.empty(), report

    names = sorted(codes)
    rank_of_code = np.empty(len(names), dtype=np.int64)
    for r, name in enumerate(names):
        rank_of_code[codes[name]] = r
    rank = rank_of_code[np.frombuffer(dev, dtype=np.int64)]
    lat = np.frombuffer(lats, dtype=np.float64)
    lon = np.frombuffer(lons, dtype=np.float64)
    ts = np.frombuffer(tss, dtype=np.int64)
    order = np.lexsort((lon, lat, ts, rank))
    rank, lat, lon, ts = rank[order], lat[order], lon[order], ts[order]
    if len(ts) > 1:
        dup = np.zeros(len(ts), dtype=bool)
        dup[1:] = (rank[1:] == rank[:-1]) & (ts[1:] == ts[:-1]) & (lat[1:] == lat[:-1]) & (lon[1:] == lon[:-1])
        ndup = int(dup.sum())
        if ndup:
            rej[REASON_DUPLICATE] += ndup
            keep = ~dup
            rank, lat, lon, ts = rank[keep], lat[keep], lon[keep], ts[keep]
    counts = np.bincount(rank, minlength=len(names))
    offsets = np.zeros(len(names) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    report.accepted = int(len(ts))
    return Trajectories(names, offsets, np.ascontiguousarray(lat), np.ascontiguousarray(lon), np.ascontiguousarray(ts)), report


def iter_device_trajectories(traj: Trajectories) -> Iterator[tuple[str, np.ndarray, np.ndarray, np.ndarray]]:
    for k, name in enumerate(traj.device_ids):
        yield (name, *traj.device(k))
