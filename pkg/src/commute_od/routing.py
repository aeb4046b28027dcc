"""Home-to-work route estimates: external HTTP backend, offline estimator, on-disk cache."""

from __future__ import annotations

import csv
import logging
import os
import threading
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import time
from typing import Iterable, Optional, Protocol, Sequence

import requests

from .geo import GeoPoint, haversine

log = logging.getLogger(__name__)

MODES = ("car", "transit")
CACHE_COLUMNS = ["olat", "olon", "dlat", "dlon", "mode", "distance_m", "duration_s", "routable"]


class RouteError(Exception):
    """A single (pair, mode) request failed for good."""


class RouteTransportError(RouteError):
    """Network-level failure; worth retrying."""


@dataclass(frozen=True)
class RouteEstimate:
    mode: str
    distance_m: float
    duration_s: float
    source: str
    routable: bool = True


class Backend(Protocol):
    name: str

    def route(self, origin: GeoPoint, dest: GeoPoint, mode: str, depart_local: time) -> RouteEstimate: ...


@dataclass
class OfflineBackend:
    """Great-circle distance times a detour factor at a fixed speed per mode.

    The defaults are placeholders, not calibrated against any road network.
    """

    detour_factor: float = 1.4
    speed_mps: dict = field(default_factory=lambda: {"car": 12.5, "transit": 6.0})
    overhead_s: dict = field(default_factory=lambda: {"car": 0.0, "transit": 600.0})
    name: str = "offline"

    def route(self, origin: GeoPoint, dest: GeoPoint, mode: str, depart_local: time = time(8, 0)) -> RouteEstimate:
        if mode not in self.speed_mps:
            raise RouteError(f"offline backend has no speed for mode {mode!r}")
        dist = haversine(origin.lat, origin.lon, dest.lat, dest.lon) * self.detour_factor
        dur = dist / self.speed_mps[mode] + self.overhead_s.get(mode, 0.0)
        return RouteEstimate(mode, dist, dur, "offline", True)


@dataclass
class HttpBackend:
    """Backend-neutral JSON routing endpoint.

    Request: ``GET {endpoint}?olat=&olon=&dlat=&dlon=&mode=&depart=HH:MM``
    with the API key (if configured) in an ``X-Api-Key`` header.
    Response: ``{"routable": bool, "distance_m": float, "duration_s": float}``;
    ``routable: false`` needs no distance or duration.
    """

    endpoint: str
    api_key_env: Optional[str] = None
    timeout_s: float = 10.0
    session: Optional[requests.Session] = None
    name: str = "external"

    def route(self, origin: GeoPoint, dest: GeoPoint, mode: str, depart_local: time = time(8, 0)) -> RouteEstimate:
        headers = {}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if key:
                headers["X-Api-Key"] = key
        params = {
            "olat": f"{origin.lat:.5f}", "olon": f"{origin.lon:.5f}",
            "dlat": f"{dest.lat:.5f}", "dlon": f"{dest.lon:.5f}",
            "mode": mode, "depart": depart_local.strftime("%H:%M"),
        }
        getter = self.session.get if self.session is not None else requests.get
        try:
            resp = getter(self.endpoint, params=params, headers=headers, timeout=self.timeout_s)
        except requests.RequestException as exc:
            raise RouteTransportError(str(exc)) from exc
        if resp.status_code >= 500 or resp.status_code == 429:
            raise RouteTransportError(f"HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise RouteError(f"HTTP {resp.status_code}")
        try:
            body = resp.json()
            if not bool(body["routable"]):
                return RouteEstimate(mode, 0.0, 0.0, "external", False)
            dist = float(body["distance_m"])
            dur = float(body["duration_s"])
        except (ValueError, KeyError, TypeError) as exc:
            raise RouteError(f"malformed routing response: {exc}") from exc
        if not (dist >= 0 and dur >= 0):
            raise RouteError("malformed routing response: negative distance or duration")
        return RouteEstimate(mode, dist, dur, "external", True)


def route(origin: GeoPoint, dest: GeoPoint, mode: str, backend: Optional[Backend] = None,
          depart_local: time = time(8, 0)) -> RouteEstimate:
    return (backend or OfflineBackend()).route(origin, dest, mode, depart_local)


def cache_key(origin: GeoPoint, dest: GeoPoint, mode: str) -> tuple[str, str, str, str, str]:
    return (f"{origin.lat:.5f}", f"{origin.lon:.5f}", f"{dest.lat:.5f}", f"{dest.lon:.5f}", mode)


class RouteCache:
    """Append-only CSV of route responses keyed by 5-decimal coordinates and mode."""

    def __init__(self, path: Optional[str], source: str):
        self.path = path
        self.source = source
        self.entries: dict[tuple, RouteEstimate] = {}
        self._lock = threading.Lock()
        if path and os.path.exists(path):
            self._load()

    def _load(self) -> None:
        good, bad = [], 0
        with open(self.path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != CACHE_COLUMNS:
                bad += 1
            else:
                for row in reader:
                    try:
                        if len(row) != len(CACHE_COLUMNS) or row[7] not in ("0", "1"):
                            raise ValueError(row)
                        est = RouteEstimate(row[4], float(row[5]), float(row[6]), self.source, row[7] == "1")
                        good.append((tuple(row[:5]), est))
                    except ValueError:
                        bad += 1
        for k, e in good:
            self.entries[k] = e
        if bad:
            log.warning("route cache %s was corrupt (%d bad rows); rebuilt from %d good rows", self.path, bad, len(good))
            self._rewrite()

    def _rewrite(self) -> None:
        tmp = self.path + ".tmp"
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CACHE_COLUMNS)
            for k in sorted(self.entries):
                w.writerow(self._row(k, self.entries[k]))
        os.replace(tmp, self.path)

    @staticmethod
    def _row(key, est: RouteEstimate):
        return (*key, repr(est.distance_m), repr(est.duration_s), int(est.routable))

    def get(self, key) -> Optional[RouteEstimate]:
        return self.entries.get(key)

    def put_many(self, items: Sequence[tuple[tuple, RouteEstimate]]) -> None:
        with self._lock:
            new = [(k, e) for k, e in sorted(items, key=lambda kv: kv[0]) if k not in self.entries]
            for k, e in new:
                self.entries[k] = e
            if not self.path or not new:
                return
            fresh = not os.path.exists(self.path)
            with open(self.path, "a", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                if fresh:
                    w.writerow(CACHE_COLUMNS)
                for k, e in new:
                    w.writerow(self._row(k, e))


class RateLimiter:
    def __init__(self, per_second: Optional[float]):
        self.interval = 1.0 / per_second if per_second else 0.0
        self._next = 0.0
        self._lock = threading.Lock()

    def wait(self) -> None:
        if not self.interval:
            return
        with self._lock:
            now = _time.monotonic()
            slot = max(now, self._next)
            self._next = slot + self.interval
        if slot > now:
            _time.sleep(slot - now)


@dataclass
class RoutingResult:
    estimates: dict[tuple[str, str], RouteEstimate]
    errors: dict[tuple[str, str], str]
    requests_made: int
    cache_hits: int


def route_all(
    profiles: Iterable[tuple[str, GeoPoint, GeoPoint]],
    modes: Sequence[str] = MODES,
    backend: Optional[Backend] = None,
    cache: Optional[RouteCache] = None,
    max_concurrency: int = 4,
    rate_limit_per_s: Optional[float] = None,
    attempts: int = 3,
    backoff_s: float = 0.5,
    depart_local: time = time(8, 0),
) -> RoutingResult:
    """Route every (device, home, work) for each mode, deduplicating identical requests.

    Coordinates are rounded to 5 decimals before requesting, so a cache hit
    and a fresh request return the same estimate. Failures are collected per
    (device, mode) and never abort the batch.
    """
    backend = backend or OfflineBackend()
    cache = cache if cache is not None else RouteCache(None, backend.name)
    wanted: dict[tuple, list[tuple[str, str]]] = {}
    for device, home, work in profiles:
        for mode in modes:
            k = cache_key(home, work, mode)
            wanted.setdefault(k, []).append((device, mode))

    hits = {k: cache.get(k) for k in wanted if cache.get(k) is not None}
    todo = sorted(k for k in wanted if k not in hits)
    limiter = RateLimiter(rate_limit_per_s)

    def fetch(k):
        o = GeoPoint(float(k[0]), float(k[1]))
        d = GeoPoint(float(k[2]), float(k[3]))
        delay = backoff_s
        for attempt in range(attempts):
            limiter.wait()
            try:
                return k, backend.route(o, d, k[4], depart_local), None
            except RouteTransportError as exc:
                if attempt == attempts - 1:
                    return k, None, f"transport failure after {attempts} attempts: {exc}"
                _time.sleep(delay)
                delay *= 2
            except RouteError as exc:
                return k, None, str(exc)
        return k, None, "no attempts made"

    if max_concurrency > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
            fetched = list(pool.map(fetch, todo))
    else:
        fetched = [fetch(k) for k in todo]

    cache.put_many([(k, est) for k, est, err in fetched if est is not None])
    results = dict(hits)
    failures = {}
    for k, est, err in fetched:
        if est is not None:
            results[k] = est
        else:
            failures[k] = err

    estimates, errors = {}, {}
    for k, owners in wanted.items():
        for owner in owners:
            if k in results:
                estimates[owner] = results[k]
            else:
                errors[owner] = failures[k]
    return RoutingResult(estimates, errors, len(todo), len(hits))
