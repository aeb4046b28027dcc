"""OD matrix validation against a reference flow table, and commute summaries."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .errors import ConfigError, DataQualityError
from .trips import ODMatrix

PAIR_MODES = ("union_nonzero", "intersection_nonzero", "ref_support")


class UndefinedCorrelationError(ValueError):
    pass


@dataclass
class FlowReference:
    flows: dict[tuple[str, str], float] = field(default_factory=dict)
    stderr: dict[tuple[str, str], float] = field(default_factory=dict)


def read_reference_csv(path: str) -> FlowReference:
    """Reference flows: ``origin_tract,dest_tract,trips[,stderr]``.

    An OD artifact (``avg_daily_trips`` column) is accepted as well.
    """
    ref = FlowReference()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        value = "trips" if "trips" in cols else ("avg_daily_trips" if "avg_daily_trips" in cols else None)
        if value is None or not {"origin_tract", "dest_tract"} <= cols:
            raise ConfigError(f"{path} must have columns origin_tract,dest_tract,trips[,stderr]")
        for row in reader:
            key = (row["origin_tract"], row["dest_tract"])
            v = float(row[value])
            if not v >= 0:
                raise DataQualityError(f"{path}: invalid flow {v} for {key[0]}->{key[1]}")
            ref.flows[key] = ref.flows.get(key, 0.0) + v
            if "stderr" in cols and row.get("stderr") not in (None, ""):
                ref.stderr[key] = float(row["stderr"])
    return ref


def reference_from_od(od: ODMatrix) -> FlowReference:
    return FlowReference(dict(od.cells))


def pearson(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Sample Pearson r and its two-sided p-value.

    The p-value uses t = r * sqrt((n - 2) / (1 - r^2)) against Student's t
    with n - 2 degrees of freedom.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if y.shape[0] != n:
        raise ValueError("x and y must have equal length")
    if n < 2:
        raise UndefinedCorrelationError("need at least two pairs")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant vector")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    return r, pearson_p_value(r, n)


def pearson_p_value(r: float, n: int) -> float:
    if n < 3:
        return 1.0
    if abs(r) >= 1.0:
        return 0.0
    t = abs(r) * math.sqrt((n - 2) / (1.0 - r * r))
    return float(2.0 * stats.t.sf(t, n - 2))


@dataclass
class ValidationReport:
    pearson_r: Optional[float]
    p_value: Optional[float]
    n_pairs: int
    pair_selection_mode: str
    scatter: list[tuple[str, str, float, float, Optional[float]]]
    strata: list[dict]
    by_mode: dict[str, dict]

    def to_dict(self) -> dict:
        return {
            "pearson_r": self.pearson_r,
            "p_value": self.p_value,
            "n_pairs": self.n_pairs,
            "pair_selection_mode": self.pair_selection_mode,
            "strata_by_reference_decile": self.strata,
            "all_modes": self.by_mode,
        }


def pair_set(gps: ODMatrix, ref: FlowReference, mode: str) -> list[tuple[str, str]]:
    g = {k for k, v in gps.cells.items() if v > 0}
    r = {k for k, v in ref.flows.items() if v > 0}
    if mode == "union_nonzero":
        keys = g | r
    elif mode == "intersection_nonzero":
        keys = g & r
    elif mode == "ref_support":
        keys = r
    else:
        raise ValueError(f"unknown pair selection {mode!r}; expected one of {PAIR_MODES}")
    return sorted(keys)


def _safe_pearson(x, y) -> tuple[Optional[float], Optional[float]]:
    try:
        return pearson(x, y)
    except UndefinedCorrelationError:
        return None, None


def decile_strata(x: np.ndarray, y: np.ndarray, n_strata: int = 10) -> list[dict]:
    """Pearson r within groups of pairs ranked by reference flow (``y``)."""
    order = np.argsort(y, kind="stable")
    out = []
    for k, idx in enumerate(np.array_split(order, n_strata)):
        if len(idx) == 0:
            continue
        r, p = _safe_pearson(x[idx], y[idx])
        out.append({
            "stratum": k,
            "n_pairs": int(len(idx)),
            "ref_min": float(y[idx].min()),
            "ref_max": float(y[idx].max()),
            "pearson_r": r,
            "p_value": p,
        })
    return out


def compare_od(gps: ODMatrix, ref: FlowReference, pair_selection: str = "union_nonzero") -> ValidationReport:
    """Correlate GPS flows with reference flows over the selected tract pairs.

    Missing cells read as zero. The report also carries r for every pair
    selection mode so the choice stays auditable.
    """
    by_mode = {}
    report = None
    for mode in PAIR_MODES:
        keys = pair_set(gps, ref, mode)
        if mode == pair_selection and not keys:
            raise DataQualityError(f"no tract pairs to compare under {mode}")
        x = np.array([gps.cells.get(k, 0.0) for k in keys], dtype=np.float64)
        y = np.array([ref.flows.get(k, 0.0) for k in keys], dtype=np.float64)
        r, p = _safe_pearson(x, y) if keys else (None, None)
        by_mode[mode] = {"pearson_r": r, "p_value": p, "n_pairs": len(keys)}
        if mode == pair_selection:
            scatter = [(o, d, float(a), float(b), ref.stderr.get((o, d))) for (o, d), a, b in zip(keys, x, y)]
            report = ValidationReport(r, p, len(keys), mode, scatter, decile_strata(x, y), by_mode)
    if report is None:
        raise ValueError(f"unknown pair selection {pair_selection!r}; expected one of {PAIR_MODES}")
    return report


def write_scatter_csv(report: ValidationReport, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["origin_tract", "dest_tract", "gps_trips", "ref_trips", "ref_stderr"])
    for o, d, a, b, se in report.scatter:
        w.writerow((o, d, repr(a), repr(b), "" if se is None else repr(se)))


# --------------------------------------------------------------------------
# Commute duration / distance summaries
# --------------------------------------------------------------------------


def _describe(values: np.ndarray) -> dict:
    return {
        "mean": float(values.mean()),
        "median": float(np.median(values)),
        "p90": float(np.percentile(values, 90)),
    }


def commute_summary(estimates: Iterable, bin_minutes: float = 5.0) -> dict:
    """Per-mode duration (minutes) and distance (km) statistics plus a duration histogram.

    ``estimates`` yields objects with ``mode``, ``routable``, ``distance_m``
    and ``duration_s``; unroutable ones only count toward the routable share.
    """
    per_mode: dict[str, list] = {}
    attempted: dict[str, int] = {}
    for e in estimates:
        attempted[e.mode] = attempted.get(e.mode, 0) + 1
        if e.routable:
            per_mode.setdefault(e.mode, []).append((e.duration_s, e.distance_m))
    out = {}
    for mode in sorted(attempted):
        rows = per_mode.get(mode, [])
        entry = {"attempted": attempted[mode], "routed": len(rows), "routable_fraction": len(rows) / attempted[mode]}
        if rows:
            dur = np.array([r[0] for r in rows], dtype=np.float64) / 60.0
            dist = np.array([r[1] for r in rows], dtype=np.float64) / 1000.0
            top = max(bin_minutes, math.ceil(dur.max() / bin_minutes) * bin_minutes)
            edges = np.arange(0.0, top + bin_minutes, bin_minutes)
            counts, edges = np.histogram(dur, bins=edges)
            entry.update({
                "duration_min": _describe(dur),
                "distance_km": _describe(dist),
                "histogram": {"bin_minutes": bin_minutes, "edges": edges.tolist(), "counts": counts.tolist()},
            })
        out[mode] = entry
    return out
