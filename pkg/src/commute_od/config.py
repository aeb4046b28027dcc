"""Pipeline configuration: a flat ``key = value`` file plus ``--set key=value`` overrides."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from datetime import date, time
from typing import Iterable, Optional

from .errors import ConfigError
from .ingest import ObservationWindow, PingSchema
from .places import PlaceRules
from .synth import SynthConfig
from .validation import PAIR_MODES

# Keys that change how a run executes but never what it produces; they are
# left out of the config echo so artifact sets compare equal across them.
RUNTIME_ONLY = frozenset({"workers"})
# Relative paths in a config file resolve against the file's directory.
PATH_KEYS = ("out_dir", "pings", "tracts", "city", "reference", "truth_agents")


@dataclass
class PipelineConfig:
    # inputs / outputs (empty path -> standard name inside out_dir)
    out_dir: str = "out"
    pings: str = ""
    tracts: str = ""
    city: str = ""
    reference: str = ""
    truth_agents: str = ""
    # ping schema
    csv_delimiter: str = ","
    col_device: str = "device_id"
    col_lat: str = "latitude"
    col_lon: str = "longitude"
    col_timestamp: str = "timestamp"
    # observation window (local calendar dates, inclusive)
    window_start: str = "2017-08-01"
    window_end: str = "2017-08-15"
    timezone: str = "America/Chicago"
    # stay extraction
    stay_time_threshold_s: int = 900
    stay_dist_m: float = 250.0
    stay_radius_mode: str = "anchor"
    # stay regions
    linkage_m: float = 250.0
    # home
    night_start: str = "20:00"
    night_end: str = "05:00"
    min_night_overlap_s: int = 10800
    long_stay_s: int = 86400
    # work
    work_start: str = "08:00"
    work_end: str = "18:00"
    walking_m: float = 800.0
    min_visits: int = 2
    work_exponent: int = 1
    sensitivity_exponents: str = "2,3"
    # trips / tracts
    commute_radius_m: float = 800.0
    min_tract_fraction: float = 0.5
    grid_resolution: int = 200
    tract_id_property: str = "GEOID"
    # validation
    pair_selection: str = "union_nonzero"
    # routing
    routing_backend: str = "offline"
    routing_modes: str = "car,transit"
    routing_endpoint: str = ""
    routing_api_key_env: str = ""
    routing_timeout_s: float = 10.0
    routing_rate_limit: float = 0.0
    routing_concurrency: int = 4
    routing_depart: str = "08:00"
    routing_detour_factor: float = 1.4
    routing_car_speed_mps: float = 12.5
    routing_transit_speed_mps: float = 6.0
    routing_transit_overhead_s: float = 600.0
    histogram_bin_min: float = 5.0
    # sweep
    sweep_time_thresholds: str = "600,900,1800,3600"
    sweep_exponents: str = "1,2,3"
    # synthetic world
    seed: int = 0
    synth_agents: int = 100
    synth_grid_rows: int = 6
    synth_grid_cols: int = 6
    synth_cell_m: float = 2000.0
    synth_origin_lat: float = 29.70
    synth_origin_lon: float = -95.50
    synth_ping_interval_s: float = 300.0
    synth_ping_jitter_s: float = 120.0
    synth_noise_m: float = 30.0
    synth_p_commute: float = 0.8
    synth_p_dropout: float = 0.01
    synth_p_errand: float = 0.25
    synth_min_work_distance_m: float = 1500.0
    recovery_tolerance_m: float = 250.0
    recovery_min_night_pings: int = 5
    # execution
    workers: int = 1

    # ------------------------------------------------------------------
    def validate(self) -> "PipelineConfig":
        positive = [
            "stay_time_threshold_s", "stay_dist_m", "linkage_m", "min_night_overlap_s", "long_stay_s",
            "walking_m", "min_visits", "work_exponent", "commute_radius_m", "min_tract_fraction",
            "routing_timeout_s", "routing_concurrency", "routing_detour_factor", "routing_car_speed_mps",
            "routing_transit_speed_mps", "histogram_bin_min", "workers",
        ]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.stay_radius_mode not in ("anchor", "pairwise"):
            raise ConfigError("stay_radius_mode must be 'anchor' or 'pairwise'")
        if self.grid_resolution < 10:
            raise ConfigError("grid_resolution must be >= 10")
        if self.min_tract_fraction > 1:
            raise ConfigError("min_tract_fraction must be <= 1")
        if self.pair_selection not in PAIR_MODES:
            raise ConfigError(f"pair_selection must be one of {PAIR_MODES}")
        if self.routing_backend not in ("offline", "external"):
            raise ConfigError("routing_backend must be 'offline' or 'external'")
        if self.routing_backend == "external" and not self.routing_endpoint:
            raise ConfigError("routing_endpoint is required for the external backend")
        for name in ("night_start", "night_end", "work_start", "work_end", "routing_depart"):
            parse_clock(getattr(self, name), name)
        self.window  # validates dates and timezone
        for m in self.modes:
            if m not in ("car", "transit"):
                raise ConfigError(f"unknown routing mode {m!r}")
        int_list(self.sweep_time_thresholds, "sweep_time_thresholds")
        int_list(self.sweep_exponents, "sweep_exponents")
        int_list(self.sensitivity_exponents, "sensitivity_exponents")
        return self

    @property
    def window(self) -> ObservationWindow:
        try:
            first = date.fromisoformat(self.window_start)
            last = date.fromisoformat(self.window_end)
        except ValueError as exc:
            raise ConfigError(f"window dates must be YYYY-MM-DD: {exc}") from exc
        if last < first:
            raise ConfigError("window_end precedes window_start")
        return ObservationWindow.from_local_dates(first, last, self.timezone)

    @property
    def schema(self) -> PingSchema:
        return PingSchema(self.csv_delimiter, self.col_device, self.col_lat, self.col_lon, self.col_timestamp)

    @property
    def modes(self) -> list[str]:
        return [m.strip() for m in self.routing_modes.split(",") if m.strip()]

    def place_rules(self, exponent: Optional[int] = None) -> PlaceRules:
        return PlaceRules(
            night_start=parse_clock(self.night_start),
            night_end=parse_clock(self.night_end),
            min_night_overlap_s=self.min_night_overlap_s,
            long_stay_s=self.long_stay_s,
            work_start=parse_clock(self.work_start),
            work_end=parse_clock(self.work_end),
            walking_m=self.walking_m,
            min_visits=self.min_visits,
            exponent=self.work_exponent if exponent is None else exponent,
            linkage_m=self.linkage_m,
        )

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            agent_count=self.synth_agents, window=self.window, grid_rows=self.synth_grid_rows,
            grid_cols=self.synth_grid_cols, cell_m=self.synth_cell_m, origin_lat=self.synth_origin_lat,
            origin_lon=self.synth_origin_lon, ping_interval_s=self.synth_ping_interval_s,
            ping_jitter_s=self.synth_ping_jitter_s, gps_noise_sigma_m=self.synth_noise_m,
            p_commute=self.synth_p_commute, p_home_detected_dropout=self.synth_p_dropout,
            p_errand=self.synth_p_errand, min_work_distance_m=self.synth_min_work_distance_m,
            rng_seed=self.seed,
        )

    def path(self, key: str, default_name: str) -> str:
        v = getattr(self, key)
        return v if v else os.path.join(self.out_dir, default_name)

    # ------------------------------------------------------------------
    def set(self, key: str, raw: str) -> None:
        ftypes = {f.name: f.type for f in fields(self)}
        if key not in ftypes:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(self, key, _coerce(key, raw, ftypes[key]))

    def echo(self) -> str:
        """Fully resolved config as ``key = value`` lines (runtime-only keys omitted).

        Meant to be stored inside ``out_dir``: paths are written relative to
        it, so loading the echo from there reproduces the run.
        """
        base = os.path.abspath(self.out_dir)
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            if f.name in RUNTIME_ONLY:
                continue
            v = getattr(self, f.name)
            if f.name == "out_dir":
                v = "."
            elif f.name in PATH_KEYS and v:
                v = os.path.relpath(os.path.abspath(v), base)
            lines.append(f"{f.name} = {_render(v)}")
        return "\n".join(lines) + "\n"


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(key: str, raw: str, ftype) -> object:
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        raw = raw[1:-1]
    name = ftype if isinstance(ftype, str) else getattr(ftype, "__name__", str(ftype))
    try:
        if name == "int":
            return int(raw)
        if name == "float":
            return float(raw)
        if name == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {name}") from exc
    return raw


def parse_clock(s: str, key: str = "time") -> time:
    try:
        h, m = s.strip().split(":")
        return time(int(h), int(m))
    except ValueError as exc:
        raise ConfigError(f"{key} must be HH:MM, got {s!r}") from exc


def int_list(s: str, key: str) -> list[int]:
    try:
        out = [int(x) for x in s.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"{key} must be a comma-separated list of integers") from exc
    if not out or any(v <= 0 for v in out):
        raise ConfigError(f"{key} must list positive integers")
    return out


def parse_lines(lines: Iterable[str]) -> list[tuple[str, str]]:
    out = []
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key = value")
        k, v = line.split("=", 1)
        out.append((k.strip(), v.strip()))
    return out


def load_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> PipelineConfig:
    cfg = PipelineConfig()
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                pairs = parse_lines(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for k, v in pairs:
            cfg.set(k, v)
        here = os.path.dirname(os.path.abspath(path))
        for k in PATH_KEYS:
            v = getattr(cfg, k)
            if v and not os.path.isabs(v):
                setattr(cfg, k, os.path.normpath(os.path.join(here, v)))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v)
    return cfg.validate()


def replace(cfg: PipelineConfig, **changes) -> PipelineConfig:
    return dataclasses.replace(cfg, **changes)
