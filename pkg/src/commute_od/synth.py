"""Seeded synthetic commuter worlds with planted homes, workplaces and schedules.

Agents live on a square grid of tracts. Each local day follows one of three
templates (commute, errand, stay home); pings are drawn from a jittered clock
and dropped whenever the agent is travelling, which mimics sparse
app-generated GPS rather than continuous traces.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
import math
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataQualityError
from .geo import M_PER_DEG, Polygon, geometry_to_geojson, haversine
from .ingest import ObservationWindow
from .trips import ODMatrix
from .validation import UndefinedCorrelationError, compare_od, reference_from_od

HOME, WORK, ERRAND = 0, 1, 2

# (start hour, end hour, place or None for travel silence)
COMMUTE_DAY = ((0, 7, HOME), (7, 9, None), (9, 17, WORK), (17, 20, None), (20, 24, HOME))
ERRAND_DAY = ((0, 10, HOME), (10, 10.5, None), (10.5, 12.5, ERRAND), (12.5, 13, None), (13, 24, HOME))
HOME_DAY = ((0, 24, HOME),)

# Local hours in which a dropout agent emits nothing.
DROPOUT_HOURS = ((0.0, 7.0), (20.0, 24.0))
NIGHT_HOURS = ((0.0, 5.0), (20.0, 24.0))


@dataclass
class SynthConfig:
    agent_count: int = 100
    window: ObservationWindow = field(
        default_factory=lambda: ObservationWindow.from_local_dates(date(2017, 8, 1), date(2017, 8, 15))
    )
    grid_rows: int = 6
    grid_cols: int = 6
    cell_m: float = 2000.0
    origin_lat: float = 29.70
    origin_lon: float = -95.50
    ping_interval_s: float = 300.0
    ping_jitter_s: float = 120.0
    gps_noise_sigma_m: float = 30.0
    p_commute: float = 0.8
    p_home_detected_dropout: float = 0.01
    p_errand: float = 0.25
    min_work_distance_m: float = 1500.0
    rng_seed: int = 0

    def validate(self) -> None:
        for name in ("p_commute", "p_home_detected_dropout", "p_errand"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be a probability, got {v}")
        if self.gps_noise_sigma_m < 0:
            raise ConfigError("gps_noise_sigma_m must be >= 0")
        if self.agent_count < 0:
            raise ConfigError("agent_count must be >= 0")
        if self.grid_rows < 1 or self.grid_cols < 1 or self.cell_m <= 0:
            raise ConfigError("tract grid needs rows, cols >= 1 and a positive cell size")
        if not 0 <= self.ping_jitter_s < self.ping_interval_s:
            raise ConfigError("ping jitter must be in [0, ping_interval_s)")
        if math.hypot(self.grid_rows * self.cell_m, self.grid_cols * self.cell_m) <= self.min_work_distance_m:
            raise ConfigError(
                f"work spacing of {self.min_work_distance_m} m is impossible inside a "
                f"{self.grid_rows}x{self.grid_cols} grid of {self.cell_m} m tracts"
            )


@dataclass
class AgentTruth:
    agent_id: str
    home_lat: float
    home_lon: float
    work_lat: float
    work_lon: float
    home_tract: str
    work_tract: str
    commuted_days: tuple[date, ...]
    night_pings: int
    dropout: bool


@dataclass
class GroundTruth:
    agents: list[AgentTruth]
    weekday_count: int
    od: ODMatrix

    def by_id(self) -> dict[str, AgentTruth]:
        return {a.agent_id: a for a in self.agents}


@dataclass
class PingStream:
    device_ids: list[str]
    agent: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    ts: np.ndarray

    def __len__(self) -> int:
        return len(self.ts)


class Grid:
    """Equirectangular metre grid anchored at the south-west corner."""

    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.m_per_deg_lon = M_PER_DEG * math.cos(math.radians(cfg.origin_lat))
        self.width = cfg.grid_cols * cfg.cell_m
        self.height = cfg.grid_rows * cfg.cell_m

    def to_latlon(self, x, y):
        return self.cfg.origin_lat + np.asarray(y) / M_PER_DEG, self.cfg.origin_lon + np.asarray(x) / self.m_per_deg_lon

    def tract_id(self, row: int, col: int) -> str:
        return f"T{row:03d}{col:03d}"

    def tract_of_xy(self, x: float, y: float) -> str:
        r = min(int(y // self.cfg.cell_m), self.cfg.grid_rows - 1)
        c = min(int(x // self.cfg.cell_m), self.cfg.grid_cols - 1)
        return self.tract_id(r, c)

    def tract_polygons(self) -> list[tuple[str, Polygon]]:
        out = []
        cm = self.cfg.cell_m
        for r in range(self.cfg.grid_rows):
            for c in range(self.cfg.grid_cols):
                la0, lo0 = self.to_latlon(c * cm, r * cm)
                la1, lo1 = self.to_latlon((c + 1) * cm, (r + 1) * cm)
                out.append((self.tract_id(r, c), Polygon.rectangle(float(lo0), float(la0), float(lo1), float(la1))))
        return out

    def boundary(self) -> Polygon:
        la0, lo0 = self.to_latlon(0.0, 0.0)
        la1, lo1 = self.to_latlon(self.width, self.height)
        return Polygon.rectangle(float(lo0), float(la0), float(lo1), float(la1))


def _local_ts(day: date, hour: float, tz) -> int:
    whole = int(hour)
    minute = int(round((hour - whole) * 60))
    if whole >= 24:
        return int(datetime.combine(day + timedelta(days=1), time(0), tzinfo=tz).timestamp())
    return int(datetime.combine(day, time(whole, minute), tzinfo=tz).timestamp())


def _hour_mask(ts: np.ndarray, windows, window: ObservationWindow) -> np.ndarray:
    """Pings whose local clock hour falls in any of ``windows``."""
    tz = window.tz
    mask = np.zeros(ts.shape, dtype=bool)
    for day in window.local_dates:
        for h0, h1 in windows:
            a, b = _local_ts(day, h0, tz), _local_ts(day, h1, tz)
            mask |= (ts >= a) & (ts < b)
    return mask


def _agent(cfg: SynthConfig, grid: Grid, k: int, weekdays: Sequence[date]):
    rng = np.random.default_rng([cfg.rng_seed, k])
    hx, hy = rng.uniform(0, grid.width), rng.uniform(0, grid.height)
    hlat, hlon = (float(v) for v in grid.to_latlon(hx, hy))
    for _ in range(10_000):
        wx, wy = rng.uniform(0, grid.width), rng.uniform(0, grid.height)
        wlat, wlon = (float(v) for v in grid.to_latlon(wx, wy))
        if haversine(hlat, hlon, wlat, wlon) >= cfg.min_work_distance_m:
            break
    else:
        raise ConfigError(f"could not place a workplace {cfg.min_work_distance_m} m from home for agent {k}")
    ex, ey = rng.uniform(0, grid.width), rng.uniform(0, grid.height)
    elat, elon = (float(v) for v in grid.to_latlon(ex, ey))
    commuted = tuple(d for d in weekdays if rng.random() < cfg.p_commute)
    errand_days = {d for d in weekdays if d not in commuted and rng.random() < cfg.p_errand}
    dropout = bool(rng.random() < cfg.p_home_detected_dropout)

    tz = cfg.window.tz
    commuted_set = set(commuted)
    seg_start, seg_end, seg_place = [], [], []
    for day in cfg.window.local_dates:
        plan = COMMUTE_DAY if day in commuted_set else (ERRAND_DAY if day in errand_days else HOME_DAY)
        for h0, h1, place in plan:
            if place is None:
                continue
            seg_start.append(_local_ts(day, h0, tz))
            seg_end.append(_local_ts(day, h1, tz))
            seg_place.append(place)
    seg_start = np.asarray(seg_start, dtype=np.int64)
    seg_end = np.asarray(seg_end, dtype=np.int64)
    seg_place = np.asarray(seg_place, dtype=np.int64)

    w0, w1 = cfg.window.start_utc, cfg.window.end_utc
    lo, hi = cfg.ping_interval_s - cfg.ping_jitter_s, cfg.ping_interval_s + cfg.ping_jitter_s
    n_max = int((w1 - w0) / lo) + 2
    steps = rng.uniform(lo, hi, n_max)
    steps[0] = rng.uniform(0, cfg.ping_interval_s)
    ts = np.floor(w0 + np.cumsum(steps)).astype(np.int64)
    ts = ts[ts < w1]
    seg = np.searchsorted(seg_start, ts, side="right") - 1
    ok = (seg >= 0) & (ts < seg_end[np.maximum(seg, 0)])
    ts, seg = ts[ok], seg[ok]
    place = seg_place[seg]
    if dropout:
        keep = ~_hour_mask(ts, DROPOUT_HOURS, cfg.window)
        ts, place = ts[keep], place[keep]
    noise = rng.normal(0.0, cfg.gps_noise_sigma_m, size=(len(ts), 2)) if cfg.gps_noise_sigma_m > 0 else np.zeros((len(ts), 2))
    base_lat = np.array([hlat, wlat, elat])[place]
    base_lon = np.array([hlon, wlon, elon])[place]
    lat = base_lat + noise[:, 0] / M_PER_DEG
    lon = base_lon + noise[:, 1] / (M_PER_DEG * np.cos(np.radians(base_lat)))
    night = int(np.count_nonzero(_hour_mask(ts, NIGHT_HOURS, cfg.window) & (place == HOME)))
    truth = AgentTruth(
        agent_id=f"agent{k:06d}",
        home_lat=hlat, home_lon=hlon, work_lat=wlat, work_lon=wlon,
        home_tract=grid.tract_of_xy(hx, hy), work_tract=grid.tract_of_xy(wx, wy),
        commuted_days=commuted, night_pings=night, dropout=dropout,
    )
    return truth, lat, lon, ts


def planted_od(agents: Sequence[AgentTruth], weekday_count: int) -> ODMatrix:
    od = ODMatrix()
    for a in sorted(agents, key=lambda a: a.agent_id):
        od.add(a.home_tract, a.work_tract, len(a.commuted_days) / weekday_count)
    return od


def generate(cfg: SynthConfig) -> tuple[PingStream, GroundTruth]:
    """Pings sorted by (timestamp, agent) plus the planted truth; same seed, same output."""
    cfg.validate()
    grid = Grid(cfg)
    weekdays = sorted(cfg.window.weekday_dates)
    agents, lats, lons, tss, owners = [], [], [], [], []
    for k in range(cfg.agent_count):
        truth, lat, lon, ts = _agent(cfg, grid, k, weekdays)
        agents.append(truth)
        lats.append(lat)
        lons.append(lon)
        tss.append(ts)
        owners.append(np.full(len(ts), k, dtype=np.int64))
    if agents:
        agent = np.concatenate(owners)
        lat, lon, ts = np.concatenate(lats), np.concatenate(lons), np.concatenate(tss)
        order = np.lexsort((agent, ts))
        agent, lat, lon, ts = agent[order], lat[order], lon[order], ts[order]
    else:
        agent = ts = np.empty(0, np.int64)
        lat = lon = np.empty(0, np.float64)
    stream = PingStream([a.agent_id for a in agents], agent, lat, lon, ts)
    wc = cfg.window.weekday_count
    return stream, GroundTruth(agents, wc, planted_od(agents, wc))


class _ClosingText(io.TextIOWrapper):
    """Text wrapper over a GzipFile that also closes the underlying raw file."""

    def __init__(self, gz, raw):
        super().__init__(gz, encoding="utf-8", newline="")
        self._raw = raw

    def close(self):
        try:
            super().close()
        finally:
            self._raw.close()


def _open_w(path: str, compress: Optional[bool] = None):
    if compress is None:
        compress = str(path).endswith(".gz")
    if compress:
        # no embedded name and mtime=0 keep compressed output byte-identical across runs
        raw = open(path, "wb")
        gz = gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0)
        return _ClosingText(gz, raw)
    return open(path, "w", encoding="utf-8", newline="")


def write_pings_csv(stream: PingStream, path: str, chunk: int = 200_000, compress: Optional[bool] = None) -> None:
    """Write pings as CSV; gzip when ``compress`` is set or, by default, when ``path`` ends in ``.gz``."""
    with _open_w(path, compress) as fh:
        fh.write("device_id,latitude,longitude,timestamp\n")
        ids = stream.device_ids
        for s in range(0, len(stream), chunk):
            a = stream.agent[s:s + chunk].tolist()
            la = stream.lat[s:s + chunk].tolist()
            lo = stream.lon[s:s + chunk].tolist()
            t = stream.ts[s:s + chunk].tolist()
            fh.write("".join(f"{ids[i]},{x:.7f},{y:.7f},{z}\n" for i, x, y, z in zip(a, la, lo, t)))


TRUTH_COLUMNS = ["agent_id", "home_lat", "home_lon", "work_lat", "work_lon", "home_tract", "work_tract",
                 "commuted_days", "night_pings", "dropout"]


def write_truth_csv(truth: GroundTruth, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRUTH_COLUMNS)
    for a in truth.agents:
        w.writerow((a.agent_id, repr(a.home_lat), repr(a.home_lon), repr(a.work_lat), repr(a.work_lon),
                    a.home_tract, a.work_tract, ";".join(d.isoformat() for d in a.commuted_days),
                    a.night_pings, int(a.dropout)))


def read_truth_csv(path: str, weekday_count: int) -> GroundTruth:
    agents = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(TRUTH_COLUMNS) - set(reader.fieldnames):
            raise ConfigError(f"{path} is not a truth agents file")
        for r in reader:
            days = tuple(date.fromisoformat(s) for s in r["commuted_days"].split(";") if s)
            agents.append(AgentTruth(r["agent_id"], float(r["home_lat"]), float(r["home_lon"]),
                                     float(r["work_lat"]), float(r["work_lon"]), r["home_tract"], r["work_tract"],
                                     days, int(r["night_pings"]), r["dropout"] == "1"))
    return GroundTruth(agents, weekday_count, planted_od(agents, weekday_count))


def tracts_geojson(cfg: SynthConfig, id_property: str = "GEOID") -> dict:
    grid = Grid(cfg)
    return {
        "type": "FeatureCollection",
        "features": [
            {"type": "Feature", "properties": {id_property: tid}, "geometry": geometry_to_geojson(poly)}
            for tid, poly in grid.tract_polygons()
        ],
    }


def city_geojson(cfg: SynthConfig) -> dict:
    return {
        "type": "FeatureCollection",
        "features": [{"type": "Feature", "properties": {"name": "synthetic city"},
                      "geometry": geometry_to_geojson(Grid(cfg).boundary())}],
    }


def dump_json(obj, fh) -> None:
    json.dump(obj, fh, indent=2, sort_keys=True)
    fh.write("\n")


# --------------------------------------------------------------------------
# Recovery scoring
# --------------------------------------------------------------------------


@dataclass
class EstimatedPlaces:
    """What the pipeline inferred for one device (coordinates may be missing)."""

    device_id: str
    home: Optional[tuple[float, float]]
    work: Optional[tuple[float, float]]
    commute_days: Optional[int] = None


def score_recovery(
    truth: GroundTruth,
    estimates: Sequence[EstimatedPlaces],
    estimated_od: ODMatrix,
    tolerance_m: float = 250.0,
    min_night_pings: int = 5,
) -> dict:
    """Compare inferred homes, workplaces, commute days and OD flows with the planted truth.

    Agents with fewer than ``min_night_pings`` night pings cannot be
    recovered by construction; they are reported separately and left out of
    the recovery denominators.
    """
    by_id = truth.by_id()
    unknown = sorted({e.device_id for e in estimates} - set(by_id))
    if unknown:
        raise ConfigError(f"{len(unknown)} estimated device id(s) missing from truth, e.g. {unknown[0]}")
    est = {e.device_id: e for e in estimates}
    recoverable = [a for a in truth.agents if a.night_pings >= min_night_pings]
    unrecoverable = [a for a in truth.agents if a.night_pings < min_night_pings]

    home_ok, work_ok, day_err = [], [], []
    for a in recoverable:
        e = est.get(a.agent_id)
        h = e is not None and e.home is not None and haversine(e.home[0], e.home[1], a.home_lat, a.home_lon) <= tolerance_m
        home_ok.append(h)
        if not h:
            continue
        w = e.work is not None and haversine(e.work[0], e.work[1], a.work_lat, a.work_lon) <= tolerance_m
        work_ok.append(w)
        if w and e.commute_days is not None:
            day_err.append(abs(e.commute_days - len(a.commuted_days)))

    try:
        od_r = compare_od(estimated_od, reference_from_od(truth.od), "union_nonzero").pearson_r
    except (UndefinedCorrelationError, DataQualityError):
        od_r = None
    return {
        "agents_total": len(truth.agents),
        "agents_recoverable": len(recoverable),
        "agents_unrecoverable": len(unrecoverable),
        "unrecoverable_ids": [a.agent_id for a in unrecoverable],
        "home_recovered": int(sum(home_ok)),
        "home_recovery": (sum(home_ok) / len(home_ok)) if home_ok else None,
        "work_recovered": int(sum(work_ok)),
        "work_recovery": (sum(work_ok) / len(work_ok)) if work_ok else None,
        "commute_day_abs_error_mean": (float(np.mean(day_err)) if day_err else None),
        "commute_day_abs_error_max": (int(max(day_err)) if day_err else None),
        "od_pearson_r": od_r,
        "tolerance_m": tolerance_m,
        "min_night_pings": min_night_pings,
    }
