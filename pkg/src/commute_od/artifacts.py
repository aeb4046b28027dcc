"""Artifact files: atomic writes with quarantine, digests, and the places CSV."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

from .errors import StageInputError
from .trips import CommuterPlaces

PLACES_COLUMNS = ["device_id", "home_lat", "home_lon", "work_lat", "work_lon", "n", "d",
                  "commute_days", "weekday_count", "avg_daily_trips"]
QUARANTINE_SUFFIX = ".quarantine"


@contextmanager
def artifact(path: str, binary: bool = False) -> Iterator:
    """Write ``path`` atomically.

    Content goes to ``path.partial`` and is renamed into place on success.
    If the body raises, the partial file is moved to ``path.quarantine`` so a
    previous good artifact is never clobbered.
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = path + ".partial"
    fh = open(tmp, "wb") if binary else open(tmp, "w", encoding="utf-8", newline="")
    try:
        yield fh
    except BaseException:
        fh.close()
        os.replace(tmp, path + QUARANTINE_SUFFIX)
        raise
    fh.close()
    os.replace(tmp, path)


def write_json(path: str, obj) -> None:
    with artifact(path) as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def require(path: str, stage: str, hint: str) -> str:
    if not path or not os.path.exists(path):
        raise StageInputError(f"{stage}: required input {path or '(unset)'} not found; {hint}")
    return path


@dataclass
class PlacesRow:
    device_id: str
    home_lat: float
    home_lon: float
    work_lat: Optional[float] = None
    work_lon: Optional[float] = None
    n: Optional[int] = None
    d: Optional[float] = None
    commute_days: Optional[int] = None
    weekday_count: Optional[int] = None
    avg_daily_trips: Optional[float] = None

    @property
    def is_commuter(self) -> bool:
        return self.work_lat is not None and self.work_lon is not None

    def commuter(self) -> CommuterPlaces:
        return CommuterPlaces(self.device_id, self.home_lat, self.home_lon, self.work_lat, self.work_lon,
                              self.avg_daily_trips, self.commute_days or 0, self.weekday_count or 0)


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def write_places_csv(rows: Sequence[PlacesRow], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(PLACES_COLUMNS)
    for r in sorted(rows, key=lambda r: r.device_id):
        w.writerow([_fmt(getattr(r, c)) for c in PLACES_COLUMNS])


def read_places_csv(path: str) -> list[PlacesRow]:
    """Read a places file; work and trip columns may be blank for home-only devices.

    For hand-written files, ``avg_daily_trips`` may be left out when
    ``commute_days`` and ``weekday_count`` are given.
    """
    need = {"device_id", "home_lat", "home_lon", "work_lat", "work_lon"}
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise StageInputError(f"{path}: places file needs columns {sorted(need)}")

        def num(row, key, cast):
            v = (row.get(key) or "").strip()
            return cast(v) if v else None

        for row in reader:
            r = PlacesRow(
                row["device_id"], float(row["home_lat"]), float(row["home_lon"]),
                num(row, "work_lat", float), num(row, "work_lon", float), num(row, "n", int), num(row, "d", float),
                num(row, "commute_days", int), num(row, "weekday_count", int), num(row, "avg_daily_trips", float),
            )
            if r.is_commuter and r.avg_daily_trips is None:
                if r.commute_days is None or not r.weekday_count:
                    raise StageInputError(
                        f"{path}: commuter {r.device_id} needs avg_daily_trips or commute_days + weekday_count"
                    )
                r.avg_daily_trips = r.commute_days / r.weekday_count
            out.append(r)
    return out
