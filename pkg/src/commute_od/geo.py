"""Geodesic distance and planar lon/lat polygon primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

# IUGG mean Earth radius.
EARTH_RADIUS_M = 6_371_008.8
# Metres per degree of arc along a great circle.
M_PER_DEG = EARTH_RADIUS_M * math.pi / 180.0


class GeometryError(ValueError):
    """Invalid polygon input (too few vertices, self-intersection, bad GeoJSON)."""


class DegenerateGeometryError(GeometryError):
    """A subject polygon with no sampled interior."""


@dataclass(frozen=True, slots=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0) or not (-180.0 <= self.lon <= 180.0):
            # NaN fails both comparisons and lands here as well
            raise ValueError(f"coordinate out of range: ({self.lat}, {self.lon})")


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in metres between two points."""
    return haversine(a.lat, a.lon, b.lat, b.lon)


def haversine(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    # Same operation order as the compiled kernel so both paths agree bitwise.
    p1 = math.radians(lat1)
    p2 = math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2) - math.radians(lon1)
    s1 = math.sin(0.5 * dp)
    s2 = math.sin(0.5 * dl)
    h = s1 * s1 + math.cos(p1) * math.cos(p2) * s2 * s2
    if h > 1.0:
        h = 1.0
    return 2.0 * EARTH_RADIUS_M * math.asin(math.sqrt(h))


def offset_point(lat: float, lon: float, north_m: float, east_m: float) -> tuple[float, float]:
    """Shift a point by local metric offsets (equirectangular, city scale only)."""
    dlat = north_m / M_PER_DEG
    dlon = east_m / (M_PER_DEG * math.cos(math.radians(lat)))
    return lat + dlat, lon + dlon


# --------------------------------------------------------------------------
# Polygons
# --------------------------------------------------------------------------


def _ring_array(ring: Iterable[Sequence[float]]) -> np.ndarray:
    """(lon, lat) vertex pairs -> (n, 2) float array with the closing vertex dropped."""
    arr = np.asarray([(float(x), float(y)) for x, y in ring], dtype=float)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise GeometryError("empty ring")
    if arr.shape[0] > 1 and np.array_equal(arr[0], arr[-1]):
        arr = arr[:-1]
    if arr.shape[0] < 3:
        raise GeometryError(f"ring has {arr.shape[0]} distinct vertices, need at least 3")
    if not np.all(np.isfinite(arr)):
        raise GeometryError("ring has non-finite coordinates")
    return arr


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = float((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        return (v > 0) - (v < 0)

    def on_seg(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    return (
        (o1 == 0 and on_seg(p1, p2, q1))
        or (o2 == 0 and on_seg(p1, p2, q2))
        or (o3 == 0 and on_seg(q1, q2, p1))
        or (o4 == 0 and on_seg(q1, q2, p2))
    )


def ring_is_simple(ring: np.ndarray) -> bool:
    """True when no two non-adjacent edges of the closed ring touch."""
    n = ring.shape[0]
    a = ring
    b = np.roll(ring, -1, axis=0)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    for i in range(n):
        # bbox prefilter against later edges, skipping neighbours of edge i
        js = np.nonzero(
            (lo[:, 0] <= hi[i, 0]) & (hi[:, 0] >= lo[i, 0]) & (lo[:, 1] <= hi[i, 1]) & (hi[:, 1] >= lo[i, 1])
        )[0]
        for j in js:
            if j <= i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(a[i], b[i], a[j], b[j]):
                return False
    return True


@dataclass(frozen=True)
class Polygon:
    """Planar lon/lat polygon; rings are stored as (n, 2) arrays of (lon, lat)."""

    exterior: np.ndarray
    holes: tuple[np.ndarray, ...] = field(default=())

    @classmethod
    def from_rings(cls, exterior, holes=(), validate: bool = True) -> "Polygon":
        ext = _ring_array(exterior)
        hs = tuple(_ring_array(h) for h in holes)
        if validate:
            for k, r in enumerate((ext,) + hs):
                if not ring_is_simple(r):
                    what = "exterior ring" if k == 0 else f"hole {k - 1}"
                    raise GeometryError(f"{what} is self-intersecting")
        return cls(ext, hs)

    @classmethod
    def from_points(cls, exterior: Sequence[GeoPoint], holes: Sequence[Sequence[GeoPoint]] = ()) -> "Polygon":
        return cls.from_rings(
            [(p.lon, p.lat) for p in exterior],
            [[(p.lon, p.lat) for p in h] for h in holes],
        )

    @classmethod
    def rectangle(cls, min_lon: float, min_lat: float, max_lon: float, max_lat: float) -> "Polygon":
        return cls.from_rings(
            [(min_lon, min_lat), (max_lon, min_lat), (max_lon, max_lat), (min_lon, max_lat)],
            validate=False,
        )

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        x, y = self.exterior[:, 0], self.exterior[:, 1]
        return float(x.min()), float(y.min()), float(x.max()), float(y.max())


@dataclass(frozen=True)
class MultiPolygon:
    parts: tuple[Polygon, ...]

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        bs = [p.bounds for p in self.parts]
        return (min(b[0] for b in bs), min(b[1] for b in bs), max(b[2] for b in bs), max(b[3] for b in bs))


Geometry = Union[Polygon, MultiPolygon]


def _parts(geom: Geometry) -> tuple[Polygon, ...]:
    return geom.parts if isinstance(geom, MultiPolygon) else (geom,)


def ring_area(ring: np.ndarray) -> float:
    """Signed shoelace area in squared degrees (positive when counter-clockwise)."""
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _ring_classify(x: float, y: float, ring: np.ndarray) -> int:
    """1 strictly inside, 0 on boundary, -1 outside (even-odd rule)."""
    inside = False
    n = ring.shape[0]
    xs = ring[:, 0].tolist()
    ys = ring[:, 1].tolist()
    for i in range(n):
        x1, y1 = xs[i], ys[i]
        x2, y2 = xs[(i + 1) % n], ys[(i + 1) % n]
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        if cross == 0.0 and min(x1, x2) <= x <= max(x1, x2) and min(y1, y2) <= y <= max(y1, y2):
            return 0
        if (y1 > y) != (y2 > y):
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xi:
                inside = not inside
    return 1 if inside else -1


def classify_point(p: GeoPoint, geom: Geometry) -> int:
    """1 interior, 0 boundary, -1 exterior for a (multi)polygon."""
    best = -1
    for poly in _parts(geom):
        c = _ring_classify(p.lon, p.lat, poly.exterior)
        if c < 0:
            continue
        for hole in poly.holes:
            h = _ring_classify(p.lon, p.lat, hole)
            if h > 0:
                c = -1
                break
            if h == 0:
                c = 0
        best = max(best, c)
        if best == 1:
            break
    return best


def point_in_polygon(p: GeoPoint, poly: Geometry) -> bool:
    """Even-odd containment; points on an edge count as inside, holes subtract."""
    return classify_point(p, poly) >= 0


def _ring_contains_many(x: np.ndarray, y: np.ndarray, ring: np.ndarray, closed: bool) -> np.ndarray:
    inside = np.zeros(x.shape, dtype=bool)
    boundary = np.zeros(x.shape, dtype=bool)
    n = ring.shape[0]
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        boundary |= (
            (cross == 0.0)
            & (x >= min(x1, x2)) & (x <= max(x1, x2))
            & (y >= min(y1, y2)) & (y <= max(y1, y2))
        )
        straddle = (y1 > y) != (y2 > y)
        if y2 != y1:
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            inside ^= straddle & (x < xi)
    if closed:
        return inside | boundary
    return inside & ~boundary


def contains_points(geom: Geometry, lon: np.ndarray, lat: np.ndarray) -> np.ndarray:
    """Vectorised :func:`point_in_polygon` over coordinate arrays."""
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    out = np.zeros(lon.shape, dtype=bool)
    for poly in _parts(geom):
        mask = _ring_contains_many(lon, lat, poly.exterior, closed=True)
        for hole in poly.holes:
            mask &= ~_ring_contains_many(lon, lat, hole, closed=False)
        out |= mask
    return out


def area_fraction_inside(subject: Geometry, container: Geometry, grid_resolution: int = 200) -> float:
    """Fraction of ``subject``'s area that lies inside ``container``.

    Samples the cell centres of a ``grid_resolution`` x ``grid_resolution``
    grid over the subject's bounding box; the error against the exact overlap
    of axis-aligned rectangles is at most 2 / grid_resolution.
    """
    if grid_resolution < 10:
        raise ValueError("grid_resolution must be >= 10")
    if not any(ring_area(p.exterior) != 0.0 for p in _parts(subject)):
        raise DegenerateGeometryError("subject polygon has zero area")
    min_x, min_y, max_x, max_y = subject.bounds
    k = (np.arange(grid_resolution) + 0.5) / grid_resolution
    gx, gy = np.meshgrid(min_x + k * (max_x - min_x), min_y + k * (max_y - min_y))
    gx, gy = gx.ravel(), gy.ravel()
    in_subject = contains_points(subject, gx, gy)
    n_subject = int(in_subject.sum())
    if n_subject == 0:
        raise DegenerateGeometryError("subject polygon has no sampled interior")
    in_both = contains_points(container, gx[in_subject], gy[in_subject])
    return int(in_both.sum()) / n_subject


def geometry_from_geojson(obj: dict, validate: bool = True) -> Geometry:
    """Build a Polygon / MultiPolygon from a GeoJSON geometry object."""
    if obj is None:
        raise GeometryError("missing geometry")
    kind = obj.get("type")
    coords = obj.get("coordinates")
    if kind == "Polygon":
        if not coords:
            raise GeometryError("polygon without rings")
        return Polygon.from_rings(coords[0], coords[1:], validate=validate)
    if kind == "MultiPolygon":
        if not coords:
            raise GeometryError("multipolygon without parts")
        return MultiPolygon(tuple(Polygon.from_rings(p[0], p[1:], validate=validate) for p in coords))
    raise GeometryError(f"unsupported geometry type {kind!r}")


def geometry_to_geojson(geom: Geometry) -> dict:
    def ring(r):
        pts = [[float(x), float(y)] for x, y in r]
        return pts + [pts[0]]

    def poly(p):
        return [ring(p.exterior)] + [ring(h) for h in p.holes]

    if isinstance(geom, MultiPolygon):
        return {"type": "MultiPolygon", "coordinates": [poly(p) for p in geom.parts]}
    return {"type": "Polygon", "coordinates": poly(geom)}
