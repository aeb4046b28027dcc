"""Stay-point extraction: stationary episodes within a radius lasting a minimum time."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import StageInputError
from .geo import GeoPoint
from .ingest import Trajectories

DEFAULT_DIST_M = 250.0
DEFAULT_TIME_S = 900

STAY_COLUMNS = ["device_id", "lat", "lon", "arrival_utc", "departure_utc", "member_count"]


@dataclass(frozen=True, slots=True)
class StayPoint:
    lat: float
    lon: float
    arrival_utc: int
    departure_utc: int
    member_count: int = 1

    @property
    def centroid(self) -> GeoPoint:
        return GeoPoint(self.lat, self.lon)

    @property
    def duration_s(self) -> int:
        return self.departure_utc - self.arrival_utc


@dataclass
class StayTable:
    """Stay points of many devices in one columnar block.

    ``start``/``stop`` index the source ping arrays so callers can recover
    member pings (the first member is the scan anchor).
    """

    device_ids: list[str]
    offsets: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    arrival: np.ndarray
    departure: np.ndarray
    member_count: np.ndarray
    start: np.ndarray | None = None
    stop: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.offsets[-1])

    @classmethod
    def empty(cls) -> "StayTable":
        f, i = np.empty(0, np.float64), np.empty(0, np.int64)
        return cls([], np.zeros(1, np.int64), f, f, i, i, i)

    def for_device(self, k: int) -> list[StayPoint]:
        lo, hi = int(self.offsets[k]), int(self.offsets[k + 1])
        return [
            StayPoint(la, lo_, a, d, m)
            for la, lo_, a, d, m in zip(
                self.lat[lo:hi].tolist(),
                self.lon[lo:hi].tolist(),
                self.arrival[lo:hi].tolist(),
                self.departure[lo:hi].tolist(),
                self.member_count[lo:hi].tolist(),
            )
        ]

    def by_device(self) -> dict[str, list[StayPoint]]:
        return {name: self.for_device(k) for k, name in enumerate(self.device_ids)}


def _check(dist_threshold_m: float, time_threshold_s: float):
    if not dist_threshold_m > 0:
        raise ValueError("dist_threshold_m must be positive")
    if not time_threshold_s > 0:
        raise ValueError("time_threshold_s must be positive")


def extract_stay_points(
    trajectory: Sequence[tuple[float, float, int]],
    dist_threshold_m: float = DEFAULT_DIST_M,
    time_threshold_s: int = DEFAULT_TIME_S,
    pairwise: bool = False,
) -> list[StayPoint]:
    """Anchor-scan stay points for one time-ordered trajectory of (lat, lon, ts).

    From anchor ``i`` the scan extends ``j`` while ping ``j`` stays within
    ``dist_threshold_m`` of the anchor. If pings ``i..j-1`` span at least
    ``time_threshold_s`` they become a stay and scanning resumes at ``j``;
    otherwise the anchor moves forward by a single ping. With ``pairwise``
    the group must instead keep every pair of members within the radius.
    """
    _check(dist_threshold_m, time_threshold_s)
    if len(trajectory) == 0:
        return []
    arr = np.asarray(trajectory, dtype=object)
    lat = np.ascontiguousarray(arr[:, 0], dtype=np.float64)
    lon = np.ascontiguousarray(arr[:, 1], dtype=np.float64)
    ts = np.ascontiguousarray(arr[:, 2], dtype=np.int64)
    if np.any(np.diff(ts) < 0):
        raise ValueError("trajectory must be ordered by timestamp")
    offsets = np.array([0, len(ts)], dtype=np.int64)
    starts, stops, clat, clon = kernels.stay_scan(lat, lon, ts, offsets, float(dist_threshold_m), int(time_threshold_s), pairwise)
    return [
        StayPoint(float(a), float(b), int(ts[s]), int(ts[e - 1]), int(e - s))
        for s, e, a, b in zip(starts, stops, clat, clon)
    ]


def extract_all(
    traj: Trajectories,
    dist_threshold_m: float = DEFAULT_DIST_M,
    time_threshold_s: int = DEFAULT_TIME_S,
    pairwise: bool = False,
) -> StayTable:
    """Stay points for every device of ``traj`` in one kernel call."""
    _check(dist_threshold_m, time_threshold_s)
    starts, stops, clat, clon = kernels.stay_scan(
        traj.lat, traj.lon, traj.ts, traj.offsets, float(dist_threshold_m), int(time_threshold_s), pairwise
    )
    owner = np.searchsorted(traj.offsets, starts, side="right") - 1
    offsets = np.zeros(len(traj.device_ids) + 1, dtype=np.int64)
    np.cumsum(np.bincount(owner, minlength=len(traj.device_ids)), out=offsets[1:])
    return StayTable(
        device_ids=list(traj.device_ids),
        offsets=offsets,
        lat=clat,
        lon=clon,
        arrival=traj.ts[starts] if len(starts) else np.empty(0, np.int64),
        departure=traj.ts[stops - 1] if len(stops) else np.empty(0, np.int64),
        member_count=(stops - starts).astype(np.int64),
        start=starts,
        stop=stops,
    )


def concat_tables(tables: Iterable[StayTable]) -> StayTable:
    """Merge per-shard tables and re-sort devices by id."""
    tables = list(tables)
    rows = []
    for t in tables:
        for k, name in enumerate(t.device_ids):
            rows.append((name, t, int(t.offsets[k]), int(t.offsets[k + 1])))
    rows.sort(key=lambda r: r[0])
    names = [r[0] for r in rows]
    sizes = [r[3] - r[2] for r in rows]
    offsets = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum(np.asarray(sizes, dtype=np.int64), out=offsets[1:])

    def cat(attr, dtype):
        parts = [getattr(t, attr)[lo:hi] for _, t, lo, hi in rows]
        return np.concatenate(parts).astype(dtype) if parts else np.empty(0, dtype)

    return StayTable(
        names, offsets, cat("lat", np.float64), cat("lon", np.float64),
        cat("arrival", np.int64), cat("departure", np.int64), cat("member_count", np.int64),
    )


def write_stays_csv(table: StayTable, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(STAY_COLUMNS)
    lat, lon = table.lat.tolist(), table.lon.tolist()
    arr, dep, cnt = table.arrival.tolist(), table.departure.tolist(), table.member_count.tolist()
    for k, name in enumerate(table.device_ids):
        for r in range(int(table.offsets[k]), int(table.offsets[k + 1])):
            w.writerow((name, repr(lat[r]), repr(lon[r]), arr[r], dep[r], cnt[r]))


def read_stays_csv(fh) -> StayTable:
    """Inverse of :func:`write_stays_csv`; rows may come in any order."""
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None:
        return StayTable.empty()
    missing = [c for c in STAY_COLUMNS if c not in header]
    if missing:
        raise StageInputError(f"stays file lacks column(s): {', '.join(missing)}")
    idx = [header.index(c) for c in STAY_COLUMNS]
    rows = [(r[idx[0]], float(r[idx[1]]), float(r[idx[2]]), int(r[idx[3]]), int(r[idx[4]]), int(r[idx[5]]))
            for r in reader if r]
    rows.sort(key=lambda r: (r[0], r[3], r[4]))
    names: list[str] = []
    offsets = [0]
    for i, r in enumerate(rows):
        if not names or names[-1] != r[0]:
            if names:
                offsets.append(i)
            names.append(r[0])
    offsets.append(len(rows))
    if not rows:
        offsets = [0]
    return StayTable(
        names,
        np.asarray(offsets, dtype=np.int64),
        np.asarray([r[1] for r in rows], dtype=np.float64),
        np.asarray([r[2] for r in rows], dtype=np.float64),
        np.asarray([r[3] for r in rows], dtype=np.int64),
        np.asarray([r[4] for r in rows], dtype=np.int64),
        np.asarray([r[5] for r in rows], dtype=np.int64),
    )
