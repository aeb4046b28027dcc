"""Home and work inference from a device's stay points."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, time, timedelta, timezone
from typing import Iterable, Mapping, Optional, Sequence
from zoneinfo import ZoneInfo

from .geo import haversine
from .regions import DEFAULT_LINKAGE_M, StayRegion, cluster_regions
from .stays import StayPoint

# Distance under which two selected work centroids count as the same place.
SAME_PLACE_M = 1.0


@dataclass(frozen=True)
class PlaceRules:
    night_start: time = time(20, 0)
    night_end: time = time(5, 0)
    min_night_overlap_s: int = 3 * 3600
    long_stay_s: int = 24 * 3600
    work_start: time = time(8, 0)
    work_end: time = time(18, 0)
    walking_m: float = 800.0
    min_visits: int = 2
    exponent: int = 1
    linkage_m: float = DEFAULT_LINKAGE_M


@dataclass
class PlaceProfile:
    device_id: str
    home: Optional[StayRegion] = None
    work: Optional[StayRegion] = None
    home_work_distance_m: Optional[float] = None
    work_visit_count: int = 0
    score_exponent_used: int = 1

    @property
    def is_commuter(self) -> bool:
        return self.home is not None and self.work is not None


@dataclass
class FunnelReport:
    total_users: int
    users_with_home: int
    users_with_home_and_work: int

    def to_dict(self) -> dict:
        def ratio(a, b):
            return a / b if b else None

        return {
            "total_users": self.total_users,
            "users_with_home": self.users_with_home,
            "users_with_home_and_work": self.users_with_home_and_work,
            "home_over_total": ratio(self.users_with_home, self.total_users),
            "commuters_over_total": ratio(self.users_with_home_and_work, self.total_users),
            "commuters_over_home": ratio(self.users_with_home_and_work, self.users_with_home),
        }


def _seconds_of_day(t: time) -> int:
    return t.hour * 3600 + t.minute * 60 + t.second


def _local(ts: int, tz: ZoneInfo) -> datetime:
    return datetime.fromtimestamp(ts, tz=timezone.utc).astimezone(tz)


def night_overlap(
    stay: StayPoint,
    tz: ZoneInfo,
    night_start: time = time(20, 0),
    night_end: time = time(5, 0),
) -> int:
    """Seconds of ``stay`` falling in the recurring local night window, summed over every night it spans."""
    a, d = stay.arrival_utc, stay.departure_utc
    first = _local(a, tz).date() - timedelta(days=1)
    last = _local(d, tz).date()
    wraps = _seconds_of_day(night_end) <= _seconds_of_day(night_start)
    total = 0
    day = first
    while day <= last:
        ws = int(datetime.combine(day, night_start, tzinfo=tz).timestamp())
        end_day = day + timedelta(days=1) if wraps else day
        we = int(datetime.combine(end_day, night_end, tzinfo=tz).timestamp())
        total += max(0, min(d, we) - max(a, ws))
        day += timedelta(days=1)
    return total


def home_candidates(stays: Iterable[StayPoint], tz: ZoneInfo, rules: PlaceRules = PlaceRules()) -> list[tuple[StayPoint, str]]:
    """Stays eligible for home detection, tagged with the criterion they met.

    The tag is ``"night"`` (enough night-window overlap), ``"long"`` (longer
    than the long-stay limit) or ``"both"``.
    """
    out = []
    for s in stays:
        night = night_overlap(s, tz, rules.night_start, rules.night_end) >= rules.min_night_overlap_s
        long_ = s.duration_s > rules.long_stay_s
        if night or long_:
            out.append((s, "both" if night and long_ else ("night" if night else "long")))
    return out


def detect_home(stays: Sequence[StayPoint], tz: ZoneInfo, rules: PlaceRules = PlaceRules()) -> Optional[StayRegion]:
    survivors = [s for s, _ in home_candidates(stays, tz, rules)]
    regions = cluster_regions(survivors, rules.linkage_m)
    if not regions:
        return None
    # most visits, then earliest first arrival; min() keeps the first on full ties
    return min(regions, key=lambda r: (-r.visit_count, r.first_arrival))


def work_hour_stays(stays: Iterable[StayPoint], tz: ZoneInfo, rules: PlaceRules = PlaceRules()) -> list[StayPoint]:
    lo, hi = _seconds_of_day(rules.work_start), _seconds_of_day(rules.work_end)
    out = []
    for s in stays:
        dt = _local(s.arrival_utc, tz)
        if dt.weekday() < 5 and lo <= dt.hour * 3600 + dt.minute * 60 + dt.second < hi:
            out.append(s)
    return out


def work_candidates(
    stays: Sequence[StayPoint], home: StayRegion, tz: ZoneInfo, rules: PlaceRules = PlaceRules()
) -> list[tuple[StayRegion, int, float]]:
    """Work-hour regions surviving the walking-distance and minimum-visit rules, as (region, n, d)."""
    regions = cluster_regions(work_hour_stays(stays, tz, rules), rules.linkage_m)
    out = []
    for r in regions:
        n = r.visit_count
        d = haversine(r.lat, r.lon, home.lat, home.lon)
        if d < rules.walking_m or n < rules.min_visits:
            continue
        out.append((r, n, d))
    return out


def select_work(candidates: Sequence[tuple[StayRegion, int, float]], exponent: int = 1) -> Optional[tuple[StayRegion, int, float]]:
    """Argmax of n**exponent * d; ties go to more visits, then earlier first arrival."""
    if not candidates:
        return None
    return min(candidates, key=lambda c: (-(float(c[1]) ** exponent) * c[2], -c[1], c[0].first_arrival))


def detect_work(
    stays: Sequence[StayPoint],
    home: StayRegion,
    tz: ZoneInfo,
    rules: PlaceRules = PlaceRules(),
    exponent: Optional[int] = None,
) -> Optional[StayRegion]:
    if home is None:
        raise ValueError("work detection requires a home region")
    best = select_work(work_candidates(stays, home, tz, rules), rules.exponent if exponent is None else exponent)
    return best[0] if best else None


def infer_places(device_id: str, stays: Sequence[StayPoint], tz: ZoneInfo, rules: PlaceRules = PlaceRules()) -> PlaceProfile:
    prof = PlaceProfile(device_id, score_exponent_used=rules.exponent)
    prof.home = detect_home(stays, tz, rules)
    if prof.home is None:
        return prof
    best = select_work(work_candidates(stays, prof.home, tz, rules), rules.exponent)
    if best is not None:
        prof.work, prof.work_visit_count, prof.home_work_distance_m = best
    return prof


def same_place(a: Optional[StayRegion], b: Optional[StayRegion]) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return haversine(a.lat, a.lon, b.lat, b.lon) <= SAME_PLACE_M


def work_differs(
    stays: Sequence[StayPoint], home: StayRegion, tz: ZoneInfo, rules: PlaceRules = PlaceRules(),
    base_exponent: int = 1, exponents: Sequence[int] = (2, 3),
) -> dict[int, bool]:
    """Per exponent, whether the selected work region moves away from the ``base_exponent`` choice."""
    cands = work_candidates(stays, home, tz, rules)
    base = select_work(cands, base_exponent)
    base_r = base[0] if base else None
    out = {}
    for p in exponents:
        alt = select_work(cands, p)
        out[p] = not same_place(base_r, alt[0] if alt else None)
    return out


def work_sensitivity(
    stays_by_device: Mapping[str, Sequence[StayPoint]],
    homes: Mapping[str, Optional[StayRegion]],
    tz: ZoneInfo,
    rules: PlaceRules = PlaceRules(),
    exponents: Sequence[int] = (2, 3),
) -> dict[int, float]:
    """Fraction of devices with a home whose work choice changes between exponent 1 and each of ``exponents``."""
    flags = [
        work_differs(stays_by_device.get(dev, ()), home, tz, rules, 1, exponents)
        for dev, home in sorted(homes.items())
        if home is not None
    ]
    return {p: (sum(f[p] for f in flags) / len(flags) if flags else 0.0) for p in exponents}


@dataclass
class SensitivityTally:
    """Commutative accumulator so shards can report sensitivity counts independently."""

    devices: int = 0
    differing: dict[int, int] = field(default_factory=dict)

    def add(self, flags: Mapping[int, bool]) -> None:
        self.devices += 1
        for p, v in flags.items():
            self.differing[p] = self.differing.get(p, 0) + int(v)

    def merge(self, other: "SensitivityTally") -> "SensitivityTally":
        out = SensitivityTally(self.devices + other.devices, dict(self.differing))
        for p, v in other.differing.items():
            out.differing[p] = out.differing.get(p, 0) + v
        return out

    def fractions(self) -> dict[int, float]:
        return {p: (v / self.devices if self.devices else 0.0) for p, v in sorted(self.differing.items())}
