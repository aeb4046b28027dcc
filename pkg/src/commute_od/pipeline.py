"""Stage orchestration: every stage reads and writes documented plain-text artifacts."""

from __future__ import annotations

import csv
import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Optional, Sequence

from . import artifacts as art
from .config import PipelineConfig, int_list, parse_clock
from .errors import ConfigError
from .geo import GeoPoint
from .ingest import ObservationWindow, Trajectories, parse_pings, shard_of
from .places import (
    FunnelReport,
    PlaceRules,
    SensitivityTally,
    detect_home,
    same_place,
    select_work,
    work_candidates,
)
from .routing import HttpBackend, OfflineBackend, RouteCache, route_all
from .stays import StayTable, concat_tables, extract_all, read_stays_csv, write_stays_csv
from .synth import (
    EstimatedPlaces,
    city_geojson,
    generate,
    read_truth_csv,
    score_recovery,
    tracts_geojson,
    write_pings_csv,
    write_truth_csv,
)
from .trips import (
    avg_daily_trips,
    build_od,
    count_commute_days,
    load_and_filter_tracts,
    read_od_csv,
    write_commuters_csv,
    write_od_csv,
    write_tracts_csv,
)
from .validation import commute_summary, compare_od, read_reference_csv, write_scatter_csv

SUBCOMMANDS = ("extract-stays", "infer-places", "build-od", "validate", "route-stats", "synth", "sweep", "all")

# standard artifact names inside out_dir
PINGS = "pings.csv"
TRACTS_GEOJSON = "tracts.geojson"
CITY_GEOJSON = "city.geojson"
TRUTH_AGENTS = "truth_agents.csv"
TRUTH_OD = "truth_od.csv"
STAYS = "stays.csv"
INGEST_REPORT = "ingest_report.json"
PLACES = "places.csv"
FUNNEL = "funnel.json"
SENSITIVITY = "work_sensitivity.json"
TRACTS_CSV = "tracts.csv"
COMMUTERS = "commuters.csv"
OD = "od.csv"
OD_REPORT = "od_report.json"
VALIDATION = "validation.json"
SCATTER = "scatter.csv"
ROUTES = "routes.csv"
COMMUTE_SUMMARY = "commute_summary.json"
HISTOGRAM = "duration_histogram.csv"
RECOVERY = "recovery.json"
SWEEP = "sweep.csv"
CONFIG_ECHO = "resolved_config.txt"
MANIFEST = "manifest.json"


def _out(cfg: PipelineConfig, name: str) -> str:
    return os.path.join(cfg.out_dir, name)


# --------------------------------------------------------------------------
# shard parallelism
# --------------------------------------------------------------------------

_SHARED: dict = {}


def _shard_entry(fn: Callable, idx: list[int]):
    return fn(_SHARED["payload"], idx)


def run_sharded(fn: Callable, payload, names: Sequence[str], workers: int) -> list:
    """Run ``fn(payload, device_indices)`` over device shards.

    Devices go to shards by a stable hash of their id. Workers are forked so
    ``payload`` is shared copy-on-write rather than pickled.
    """
    if workers <= 1 or len(names) < 2:
        return [fn(payload, list(range(len(names))))]
    shards: list[list[int]] = [[] for _ in range(workers)]
    for k, name in enumerate(names):
        shards[shard_of(name, workers)].append(k)
    _SHARED["payload"] = payload
    try:
        with ProcessPoolExecutor(workers, mp_context=mp.get_context("fork")) as pool:
            futures = [pool.submit(_shard_entry, fn, idx) for idx in shards if idx]
            return [f.result() for f in futures]
    finally:
        _SHARED.clear()


def _extract_shard(payload, idx):
    traj, dist, time_s, pairwise = payload
    return extract_all(traj.subset(idx), dist, time_s, pairwise)


def extract_stays(traj: Trajectories, cfg: PipelineConfig, time_threshold_s: Optional[int] = None) -> StayTable:
    payload = (traj, cfg.stay_dist_m, time_threshold_s or cfg.stay_time_threshold_s, cfg.stay_radius_mode == "pairwise")
    parts = run_sharded(_extract_shard, payload, traj.device_ids, cfg.workers)
    return parts[0] if len(parts) == 1 else concat_tables(parts)


def infer_device(device_id: str, stays, window: ObservationWindow, rules: PlaceRules,
                 commute_radius_m: float, sensitivity_exponents: Sequence[int]):
    """(places row or None, sensitivity flags or None) for one device's stays."""
    tz = window.tz
    home = detect_home(stays, tz, rules)
    if home is None:
        return None, None
    row = art.PlacesRow(device_id, home.lat, home.lon)
    cands = work_candidates(stays, home, tz, rules)
    base = select_work(cands, 1)
    flags = {}
    for p in sensitivity_exponents:
        alt = select_work(cands, p)
        flags[p] = not same_place(base[0] if base else None, alt[0] if alt else None)
    best = select_work(cands, rules.exponent)
    if best is not None:
        work, n, d = best
        days = count_commute_days(stays, work, window, commute_radius_m)
        row.work_lat, row.work_lon, row.n, row.d = work.lat, work.lon, n, d
        row.commute_days, row.weekday_count = days, window.weekday_count
        row.avg_daily_trips = avg_daily_trips(days, window.weekday_count)
    return row, flags


def _infer_shard(payload, idx):
    table, window, rules, radius, exps = payload
    out = []
    for k in idx:
        out.append(infer_device(table.device_ids[k], table.for_device(k), window, rules, radius, exps))
    return out


def infer_all(table: StayTable, cfg: PipelineConfig, exponent: Optional[int] = None):
    """Places rows (home-detected devices, sorted) and a sensitivity tally."""
    window = cfg.window
    if window.weekday_count == 0:
        raise ConfigError("observation window contains no weekdays")
    payload = (table, window, cfg.place_rules(exponent), cfg.commute_radius_m,
               tuple(int_list(cfg.sensitivity_exponents, "sensitivity_exponents")))
    rows, tally = [], SensitivityTally()
    for part in run_sharded(_infer_shard, payload, table.device_ids, cfg.workers):
        for row, flags in part:
            if row is not None:
                rows.append(row)
                tally.add(flags)
    rows.sort(key=lambda r: r.device_id)
    return rows, tally


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------


def stage_synth(cfg: PipelineConfig) -> dict:
    scfg = cfg.synth_config()
    stream, truth = generate(scfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    pings = cfg.path("pings", PINGS)
    tmp = pings + ".partial"
    try:
        write_pings_csv(stream, tmp, compress=pings.endswith(".gz"))
    except BaseException:
        if os.path.exists(tmp):
            os.replace(tmp, pings + art.QUARANTINE_SUFFIX)
        raise
    os.replace(tmp, pings)
    with art.artifact(cfg.path("truth_agents", TRUTH_AGENTS)) as fh:
        write_truth_csv(truth, fh)
    with art.artifact(_out(cfg, TRUTH_OD)) as fh:
        write_od_csv(truth.od, fh)
    art.write_json(cfg.path("tracts", TRACTS_GEOJSON), tracts_geojson(scfg, cfg.tract_id_property))
    art.write_json(cfg.path("city", CITY_GEOJSON), city_geojson(scfg))
    return {"agents": len(truth.agents), "pings": len(stream), "planted_od_pairs": len(truth.od)}


def stage_extract(cfg: PipelineConfig) -> dict:
    pings = art.require(cfg.path("pings", PINGS), "extract-stays", "set pings=<file> or run `synth` first")
    traj, report = parse_pings(pings, cfg.schema, cfg.window)
    table = extract_stays(traj, cfg)
    with art.artifact(_out(cfg, STAYS)) as fh:
        write_stays_csv(table, fh)
    summary = report.to_dict()
    summary.update({"devices": len(traj), "stay_points": len(table),
                    "devices_with_stays": int(sum(1 for k in range(len(table.device_ids))
                                                  if table.offsets[k + 1] > table.offsets[k]))})
    art.write_json(_out(cfg, INGEST_REPORT), summary)
    return summary


def stage_infer(cfg: PipelineConfig) -> dict:
    path = art.require(_out(cfg, STAYS), "infer-places", "run `extract-stays` first")
    with open(path, newline="", encoding="utf-8") as fh:
        table = read_stays_csv(fh)
    rows, tally = infer_all(table, cfg)
    total = len(table.device_ids)
    rep = _out(cfg, INGEST_REPORT)
    if os.path.exists(rep):
        total = max(total, int(art.read_json(rep).get("devices", total)))
    funnel = FunnelReport(total, len(rows), sum(1 for r in rows if r.is_commuter))
    with art.artifact(_out(cfg, PLACES)) as fh:
        art.write_places_csv(rows, fh)
    art.write_json(_out(cfg, FUNNEL), funnel.to_dict())
    sens = {
        "base_exponent": 1,
        "devices_with_home": tally.devices,
        "differing_devices": {str(p): v for p, v in sorted(tally.differing.items())},
        "differing_fraction": {str(p): v for p, v in tally.fractions().items()},
    }
    art.write_json(_out(cfg, SENSITIVITY), sens)
    return {"funnel": funnel.to_dict(), "work_sensitivity": sens["differing_fraction"]}


def _tracts(cfg: PipelineConfig, stage: str):
    tracts = art.require(cfg.path("tracts", TRACTS_GEOJSON), stage, "set tracts=<GeoJSON>")
    city = art.require(cfg.path("city", CITY_GEOJSON), stage, "set city=<GeoJSON>")
    return load_and_filter_tracts(tracts, city, cfg.min_tract_fraction, cfg.tract_id_property, cfg.grid_resolution)


def stage_build_od(cfg: PipelineConfig) -> dict:
    places = art.require(_out(cfg, PLACES), "build-od", "run `infer-places` first or place a places.csv in out_dir")
    rows = art.read_places_csv(places)
    tracts = _tracts(cfg, "build-od")
    od, records, excl = build_od([r.commuter() for r in rows if r.is_commuter], tracts)
    with art.artifact(_out(cfg, TRACTS_CSV)) as fh:
        write_tracts_csv(tracts, fh)
    with art.artifact(_out(cfg, COMMUTERS)) as fh:
        write_commuters_csv(records, fh)
    with art.artifact(_out(cfg, OD)) as fh:
        write_od_csv(od, fh)
    report = {
        "commuters_in": sum(1 for r in rows if r.is_commuter),
        "commuters_included": len(records),
        **excl.to_dict(),
        "od_pairs": len(od),
        "od_total_trips": od.total,
        "tracts_total": len(tracts),
        "tracts_included": sum(t.included for t in tracts),
        "window": {"start_utc": cfg.window.start_utc, "end_utc": cfg.window.end_utc,
                   "timezone": cfg.timezone, "weekday_count": cfg.window.weekday_count},
        "thresholds": {"commute_radius_m": cfg.commute_radius_m, "min_tract_fraction": cfg.min_tract_fraction},
    }
    art.write_json(_out(cfg, OD_REPORT), report)
    return report


def _reference_path(cfg: PipelineConfig) -> Optional[str]:
    if cfg.reference:
        return cfg.reference
    fallback = _out(cfg, TRUTH_OD)
    return fallback if os.path.exists(fallback) else None


def stage_validate(cfg: PipelineConfig) -> dict:
    od_path = art.require(_out(cfg, OD), "validate", "run `build-od` first")
    ref_path = art.require(_reference_path(cfg) or "", "validate", "set reference=<CSV origin_tract,dest_tract,trips>")
    report = compare_od(read_od_csv(od_path), read_reference_csv(ref_path), cfg.pair_selection)
    art.write_json(_out(cfg, VALIDATION), report.to_dict())
    with art.artifact(_out(cfg, SCATTER)) as fh:
        write_scatter_csv(report, fh)
    return {"pearson_r": report.pearson_r, "p_value": report.p_value, "n_pairs": report.n_pairs}


def make_backend(cfg: PipelineConfig):
    if cfg.routing_backend == "external":
        return HttpBackend(cfg.routing_endpoint, cfg.routing_api_key_env or None, cfg.routing_timeout_s)
    return OfflineBackend(
        detour_factor=cfg.routing_detour_factor,
        speed_mps={"car": cfg.routing_car_speed_mps, "transit": cfg.routing_transit_speed_mps},
        overhead_s={"car": 0.0, "transit": cfg.routing_transit_overhead_s},
    )


def stage_route_stats(cfg: PipelineConfig, backend=None) -> dict:
    places = art.require(_out(cfg, PLACES), "route-stats", "run `infer-places` first")
    commuters = [r for r in art.read_places_csv(places) if r.is_commuter]
    backend = backend or make_backend(cfg)
    cache = RouteCache(_out(cfg, f"route_cache_{backend.name}.csv"), backend.name)
    result = route_all(
        [(r.device_id, GeoPoint(r.home_lat, r.home_lon), GeoPoint(r.work_lat, r.work_lon)) for r in commuters],
        cfg.modes, backend, cache, cfg.routing_concurrency, cfg.routing_rate_limit or None,
        depart_local=parse_clock(cfg.routing_depart),
    )
    with art.artifact(_out(cfg, ROUTES)) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["device_id", "mode", "distance_m", "duration_s", "source", "routable", "error"])
        for key in sorted(set(result.estimates) | set(result.errors)):
            e = result.estimates.get(key)
            if e is None:
                w.writerow((*key, "", "", backend.name, 0, result.errors[key]))
            else:
                w.writerow((*key, repr(e.distance_m), repr(e.duration_s), e.source, int(e.routable), ""))
    ordered = [result.estimates[k] for k in sorted(result.estimates)]
    summary = commute_summary(ordered, cfg.histogram_bin_min)
    summary_doc = {"modes": summary, "failed_requests": len(result.errors), "commuters": len(commuters)}
    art.write_json(_out(cfg, COMMUTE_SUMMARY), summary_doc)
    with art.artifact(_out(cfg, HISTOGRAM)) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "bin_start_min", "bin_end_min", "count"])
        for mode, entry in summary.items():
            h = entry.get("histogram")
            if not h:
                continue
            for a, b, c in zip(h["edges"][:-1], h["edges"][1:], h["counts"]):
                w.writerow((mode, repr(a), repr(b), c))
    return {"commuters": len(commuters), "requests": result.requests_made, "cache_hits": result.cache_hits,
            "failed": len(result.errors)}


def stage_recovery(cfg: PipelineConfig) -> dict:
    truth_path = art.require(cfg.path("truth_agents", TRUTH_AGENTS), "recovery", "run `synth` first")
    truth = read_truth_csv(truth_path, cfg.window.weekday_count)
    rows = art.read_places_csv(art.require(_out(cfg, PLACES), "recovery", "run `infer-places` first"))
    od = read_od_csv(art.require(_out(cfg, OD), "recovery", "run `build-od` first"))
    est = [
        EstimatedPlaces(r.device_id, (r.home_lat, r.home_lon),
                        (r.work_lat, r.work_lon) if r.is_commuter else None, r.commute_days)
        for r in rows
    ]
    report = score_recovery(truth, est, od, cfg.recovery_tolerance_m, cfg.recovery_min_night_pings)
    art.write_json(_out(cfg, RECOVERY), report)
    return {k: v for k, v in report.items() if k != "unrecoverable_ids"}


def stage_sweep(cfg: PipelineConfig) -> dict:
    """Re-run stays -> places -> OD over a grid of stay time thresholds and work exponents."""
    pings = art.require(cfg.path("pings", PINGS), "sweep", "set pings=<file> or run `synth` first")
    traj, _ = parse_pings(pings, cfg.schema, cfg.window)
    have_tracts = os.path.exists(cfg.path("tracts", TRACTS_GEOJSON)) and os.path.exists(cfg.path("city", CITY_GEOJSON))
    tracts = _tracts(cfg, "sweep") if have_tracts else None
    ref_path = _reference_path(cfg)
    ref = read_reference_csv(ref_path) if ref_path and os.path.exists(ref_path) else None
    table_rows = []
    for t in int_list(cfg.sweep_time_thresholds, "sweep_time_thresholds"):
        stays = extract_stays(traj, cfg, t)
        for p in int_list(cfg.sweep_exponents, "sweep_exponents"):
            rows, _ = infer_all(stays, cfg, exponent=p)
            commuters = [r for r in rows if r.is_commuter]
            od_pairs = od_total = r_val = ""
            if tracts is not None:
                od, _, _ = build_od([r.commuter() for r in commuters], tracts)
                od_pairs, od_total = len(od), repr(od.total)
                if ref is not None and len(od):
                    rv = compare_od(od, ref, cfg.pair_selection).pearson_r
                    r_val = "" if rv is None else repr(rv)
            table_rows.append((t, p, len(stays), len(traj), len(rows), len(commuters), od_pairs, od_total, r_val))
    with art.artifact(_out(cfg, SWEEP)) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_threshold_s", "exponent", "stay_points", "devices", "users_with_home", "commuters",
                    "od_pairs", "od_total_trips", "pearson_r"])
        w.writerows(table_rows)
    return {"rows": len(table_rows)}


def write_manifest(cfg: PipelineConfig) -> dict:
    with art.artifact(_out(cfg, CONFIG_ECHO)) as fh:
        fh.write(cfg.echo())
    entries = {}
    for name in sorted(os.listdir(cfg.out_dir)):
        p = _out(cfg, name)
        if name == MANIFEST or not os.path.isfile(p) or name.endswith((".partial", art.QUARANTINE_SUFFIX)):
            continue
        entries[name] = {"sha256": art.sha256_file(p), "bytes": os.path.getsize(p)}
    manifest = {"artifacts": entries}
    art.write_json(_out(cfg, MANIFEST), manifest)
    return manifest


def stage_all(cfg: PipelineConfig) -> dict:
    out = {"extract-stays": stage_extract(cfg), "infer-places": stage_infer(cfg), "build-od": stage_build_od(cfg)}
    if _reference_path(cfg):
        out["validate"] = stage_validate(cfg)
    out["route-stats"] = stage_route_stats(cfg)
    if os.path.exists(cfg.path("truth_agents", TRUTH_AGENTS)):
        out["recovery"] = stage_recovery(cfg)
    write_manifest(cfg)
    return out


STAGES = {
    "synth": stage_synth,
    "extract-stays": stage_extract,
    "infer-places": stage_infer,
    "build-od": stage_build_od,
    "validate": stage_validate,
    "route-stats": stage_route_stats,
    "sweep": stage_sweep,
    "all": stage_all,
}


def run(subcommand: str, cfg: PipelineConfig) -> dict:
    if subcommand not in STAGES:
        raise ConfigError(f"unknown subcommand {subcommand!r}; choose from {', '.join(SUBCOMMANDS)}")
    os.makedirs(cfg.out_dir, exist_ok=True)
    return STAGES[subcommand](cfg)
