"""Average daily home-to-work trips, tract assignment and OD aggregation."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataQualityError
from .geo import (
    GeoPoint,
    Geometry,
    GeometryError,
    MultiPolygon,
    area_fraction_inside,
    classify_point,
    geometry_from_geojson,
    haversine,
)
from .ingest import ObservationWindow
from .regions import StayRegion
from .stays import StayPoint

OD_COLUMNS = ["origin_tract", "dest_tract", "avg_daily_trips"]


def count_commute_days(
    stays: Iterable[StayPoint], work: StayRegion, window: ObservationWindow, radius_m: float = 800.0
) -> int:
    """Distinct local weekdays of the window with a stay arriving within ``radius_m`` of work."""
    days = set()
    weekdays = window.weekday_dates
    tz = window.tz
    for s in stays:
        if haversine(s.lat, s.lon, work.lat, work.lon) <= radius_m:
            day = datetime.fromtimestamp(s.arrival_utc, tz=timezone.utc).astimezone(tz).date()
            if day in weekdays:
                days.add(day)
    return len(days)


def avg_daily_trips(commute_days: int, weekday_count: int) -> float:
    if weekday_count <= 0:
        raise ConfigError("observation window contains no weekdays")
    return commute_days / weekday_count


@dataclass
class TractGeometry:
    tract_id: str
    geometry: Geometry
    area_fraction_in_city: float = 0.0
    included: bool = False


@dataclass
class CommuterRecord:
    device_id: str
    home_tract: str
    work_tract: str
    avg_daily_trips: float
    commute_days: int
    weekday_count: int


@dataclass
class ODMatrix:
    cells: dict[tuple[str, str], float] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def add(self, origin: str, dest: str, trips: float) -> None:
        if trips > 0:
            self.cells[(origin, dest)] = self.cells.get((origin, dest), 0.0) + trips

    def merge(self, other: "ODMatrix") -> "ODMatrix":
        out = ODMatrix(dict(self.cells), dict(self.metadata))
        for (o, d), v in sorted(other.cells.items()):
            out.add(o, d, v)
        return out

    @property
    def total(self) -> float:
        return sum(self.cells[k] for k in sorted(self.cells))

    def __len__(self) -> int:
        return len(self.cells)


@dataclass
class ODExclusions:
    home_outside: int = 0
    work_outside: int = 0
    both_outside: int = 0

    @property
    def total(self) -> int:
        return self.home_outside + self.work_outside + self.both_outside

    def to_dict(self) -> dict:
        return {
            "excluded_total": self.total,
            "home_outside_included_tracts": self.home_outside,
            "work_outside_included_tracts": self.work_outside,
            "both_outside_included_tracts": self.both_outside,
        }


def _load_features(path: str) -> list[dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read GeoJSON {path}: {exc}") from exc
    if doc.get("type") == "FeatureCollection":
        return list(doc.get("features", []))
    if doc.get("type") == "Feature":
        return [doc]
    return [{"type": "Feature", "properties": {}, "geometry": doc}]


def load_geometry_union(path: str) -> Geometry:
    """All polygons of a GeoJSON file as one multipolygon (e.g. a city boundary)."""
    parts = []
    for k, feat in enumerate(_load_features(path)):
        try:
            g = geometry_from_geojson(feat.get("geometry"))
        except GeometryError as exc:
            raise GeometryError(f"{path} feature {k}: {exc}") from exc
        parts.extend(g.parts if isinstance(g, MultiPolygon) else (g,))
    if not parts:
        raise GeometryError(f"{path} contains no polygons")
    return MultiPolygon(tuple(parts))


def load_tracts(path: str, id_property: str = "GEOID") -> list[TractGeometry]:
    tracts = []
    seen = set()
    for k, feat in enumerate(_load_features(path)):
        props = feat.get("properties") or {}
        if id_property not in props:
            raise GeometryError(f"{path} feature {k} has no {id_property!r} property")
        tid = str(props[id_property])
        if tid in seen:
            raise GeometryError(f"duplicate tract id {tid}")
        seen.add(tid)
        try:
            geom = geometry_from_geojson(feat.get("geometry"))
        except GeometryError as exc:
            raise GeometryError(f"tract {tid}: {exc}") from exc
        tracts.append(TractGeometry(tid, geom))
    return tracts


def filter_tracts(
    tracts: Sequence[TractGeometry], city: Geometry, min_fraction: float = 0.5, grid_resolution: int = 200
) -> list[TractGeometry]:
    for t in tracts:
        try:
            t.area_fraction_in_city = area_fraction_inside(t.geometry, city, grid_resolution)
        except GeometryError as exc:
            raise GeometryError(f"tract {t.tract_id}: {exc}") from exc
        t.included = t.area_fraction_in_city >= min_fraction
    return list(tracts)


def load_and_filter_tracts(
    tract_file: str,
    city_boundary_file: str,
    min_fraction: float = 0.5,
    id_property: str = "GEOID",
    grid_resolution: int = 200,
) -> list[TractGeometry]:
    return filter_tracts(
        load_tracts(tract_file, id_property), load_geometry_union(city_boundary_file), min_fraction, grid_resolution
    )


class TractIndex:
    """Point -> included tract lookup with a bounding-box prefilter."""

    def __init__(self, tracts: Iterable[TractGeometry]):
        self.tracts = sorted((t for t in tracts if t.included), key=lambda t: t.tract_id)
        b = np.array([t.geometry.bounds for t in self.tracts], dtype=float).reshape(-1, 4)
        self._bounds = b

    def locate(self, p: GeoPoint) -> Optional[str]:
        """Tract id containing ``p``; on a shared boundary the smallest id wins.

        Raises :class:`DataQualityError` when ``p`` lies strictly inside two
        tracts (overlapping input geometry).
        """
        b = self._bounds
        if not len(b):
            return None
        hits = np.nonzero((b[:, 0] <= p.lon) & (p.lon <= b[:, 2]) & (b[:, 1] <= p.lat) & (p.lat <= b[:, 3]))[0]
        interior, boundary = [], []
        for k in hits:
            c = classify_point(p, self.tracts[k].geometry)
            if c > 0:
                interior.append(self.tracts[k].tract_id)
            elif c == 0:
                boundary.append(self.tracts[k].tract_id)
        if len(interior) > 1:
            raise DataQualityError(
                f"point ({p.lat}, {p.lon}) lies inside overlapping tracts {', '.join(sorted(interior))}"
            )
        if interior:
            return interior[0]
        return min(boundary) if boundary else None


@dataclass
class CommuterPlaces:
    """One row of the places artifact, as consumed by OD construction."""

    device_id: str
    home_lat: float
    home_lon: float
    work_lat: float
    work_lon: float
    avg_daily_trips: float
    commute_days: int = 0
    weekday_count: int = 0


def build_od(
    commuters: Iterable[CommuterPlaces], tracts: Sequence[TractGeometry]
) -> tuple[ODMatrix, list[CommuterRecord], ODExclusions]:
    """Assign homes/works to included tracts and sum average daily trips per tract pair."""
    index = TractIndex(tracts)
    od = ODMatrix()
    records = []
    excl = ODExclusions()
    for c in sorted(commuters, key=lambda c: c.device_id):
        h = index.locate(GeoPoint(c.home_lat, c.home_lon))
        w = index.locate(GeoPoint(c.work_lat, c.work_lon))
        if h is None or w is None:
            if h is None and w is None:
                excl.both_outside += 1
            elif h is None:
                excl.home_outside += 1
            else:
                excl.work_outside += 1
            continue
        records.append(CommuterRecord(c.device_id, h, w, c.avg_daily_trips, c.commute_days, c.weekday_count))
        od.add(h, w, c.avg_daily_trips)
    return od, records, excl


def write_od_csv(od: ODMatrix, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(OD_COLUMNS)
    for (o, d) in sorted(od.cells):
        w.writerow((o, d, repr(od.cells[(o, d)])))


def read_od_csv(path: str, value_column: str = "avg_daily_trips") -> ODMatrix:
    od = ODMatrix()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"origin_tract", "dest_tract", value_column}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ConfigError(f"{path} must have columns {sorted(need)}")
        for row in reader:
            v = float(row[value_column])
            if v < 0:
                raise DataQualityError(f"{path}: negative flow for {row['origin_tract']}->{row['dest_tract']}")
            od.add(row["origin_tract"], row["dest_tract"], v)
    return od


def write_tracts_csv(tracts: Sequence[TractGeometry], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["tract_id", "area_fraction_in_city", "included"])
    for t in sorted(tracts, key=lambda t: t.tract_id):
        w.writerow((t.tract_id, repr(t.area_fraction_in_city), int(t.included)))


def write_commuters_csv(records: Sequence[CommuterRecord], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["device_id", "home_tract", "work_tract", "avg_daily_trips", "commute_days", "weekday_count"])
    for r in records:
        w.writerow((r.device_id, r.home_tract, r.work_tract, repr(r.avg_daily_trips), r.commute_days, r.weekday_count))
