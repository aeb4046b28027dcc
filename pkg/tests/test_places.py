from datetime import datetime

import pytest

from commute_od.geo import haversine, offset_point
from commute_od.ingest import load_zone
from commute_od.places import (
    FunnelReport,
    SensitivityTally,
    detect_home,
    detect_work,
    home_candidates,
    infer_places,
    night_overlap,
    select_work,
    work_candidates,
    work_differs,
    work_hour_stays,
    work_sensitivity,
)
from commute_od.regions import StayRegion
from commute_od.stays import StayPoint

TZ = load_zone("America/Chicago")
HOME = (29.75, -95.40)


def ts(y, m, d, hh, mm=0):
    return int(datetime(y, m, d, hh, mm, tzinfo=TZ).timestamp())


def stay(where, a, d):
    return StayPoint(where[0], where[1], a, d, 5)


def at(north, east):
    return offset_point(*HOME, north, east)


def test_night_overlap_basic_and_accumulated():
    s = stay(HOME, ts(2017, 8, 1, 21), ts(2017, 8, 2, 6))
    assert night_overlap(s, TZ) == 8 * 3600
    two_nights = stay(HOME, ts(2017, 8, 1, 4), ts(2017, 8, 1, 22))
    assert night_overlap(two_nights, TZ) == 3600 + 2 * 3600


def test_night_overlap_across_dst_end():
    # 2017-11-05 02:00 CDT -> 01:00 CST: the night holds one extra real hour
    s = stay(HOME, ts(2017, 11, 4, 20), ts(2017, 11, 5, 5))
    assert night_overlap(s, TZ) == 10 * 3600


def test_home_candidate_tags():
    night = stay(HOME, ts(2017, 8, 1, 22), ts(2017, 8, 2, 2))
    short_night = stay(HOME, ts(2017, 8, 1, 22), ts(2017, 8, 2, 0, 59))
    long_day = stay(HOME, ts(2017, 8, 5, 6), ts(2017, 8, 6, 6, 1))
    tags = home_candidates([night, short_night, long_day], TZ)
    assert [t for _, t in tags] == ["night", "both"]


def test_home_majority_and_tie_break():
    a, b = HOME, at(0, 3000)
    nights = [stay(a, ts(2017, 8, d, 21), ts(2017, 8, d + 1, 6)) for d in (1, 2)]
    nights += [stay(b, ts(2017, 8, d, 21), ts(2017, 8, d + 1, 6)) for d in (3, 4, 5)]
    home = detect_home(nights, TZ)
    assert haversine(home.lat, home.lon, *b) < 1
    tie = nights[:2] + nights[2:4]
    assert haversine(detect_home(tie, TZ).lat, detect_home(tie, TZ).lon, *a) < 1
    assert detect_home([stay(a, ts(2017, 8, 2, 9), ts(2017, 8, 2, 17))], TZ) is None


def _home_region():
    return StayRegion(HOME[0], HOME[1], (), ())


def test_work_hour_filter_uses_arrival_on_weekdays():
    mon = stay(HOME, ts(2017, 8, 7, 8), ts(2017, 8, 7, 17))
    late = stay(HOME, ts(2017, 8, 7, 18), ts(2017, 8, 7, 19))
    sat = stay(HOME, ts(2017, 8, 5, 9), ts(2017, 8, 5, 17))
    assert work_hour_stays([mon, late, sat], TZ) == [mon]


def test_work_rules():
    home = _home_region()
    near = at(500, 0)  # within walking distance of home
    far1 = at(0, 5000)
    far2 = at(0, 2000)
    days = [7, 8, 9, 10, 11]
    s = [stay(near, ts(2017, 8, d, 9), ts(2017, 8, d, 12)) for d in days]
    s += [stay(far1, ts(2017, 8, d, 9), ts(2017, 8, d, 17)) for d in days[:2]]
    s += [stay(far2, ts(2017, 8, d, 13), ts(2017, 8, d, 17)) for d in days[:4]]
    s += [stay(at(0, 9000), ts(2017, 8, 7, 14), ts(2017, 8, 7, 16))]  # one visit only
    cands = work_candidates(s, home, TZ)
    assert sorted(n for _, n, _ in cands) == [2, 4]
    # n*d: 2 * 5000 = 10000 beats 4 * 2000 = 8000 at p = 1; p = 2 flips it
    w1 = detect_work(s, home, TZ)
    assert haversine(w1.lat, w1.lon, *far1) < 1
    w2 = detect_work(s, home, TZ, exponent=2)
    assert haversine(w2.lat, w2.lon, *far2) < 1
    assert work_differs(s, home, TZ) == {2: True, 3: True}
    with pytest.raises(ValueError):
        detect_work(s, None, TZ)


def test_select_work_tie_breaks():
    r_early = StayRegion(0, 0, (StayPoint(0, 0, 100, 200, 1),), (0,))
    r_late = StayRegion(0, 0, (StayPoint(0, 0, 50_000, 60_000, 1),), (1,))
    # equal score: more visits wins
    assert select_work([(r_early, 2, 3000.0), (r_late, 3, 2000.0)])[0] is r_late
    # equal score and visits: earlier first arrival wins
    assert select_work([(r_late, 2, 3000.0), (r_early, 2, 3000.0)])[0] is r_early
    assert select_work([]) is None


def test_infer_places_and_sensitivity_tally():
    work = at(0, 3000)
    s = []
    for d in (7, 8, 9):
        s.append(stay(HOME, ts(2017, 8, d - 1, 20), ts(2017, 8, d, 7)))
        s.append(stay(work, ts(2017, 8, d, 9), ts(2017, 8, d, 17)))
    prof = infer_places("dev", s, TZ)
    assert prof.is_commuter and prof.work_visit_count == 3
    assert prof.home_work_distance_m == pytest.approx(3000, rel=1e-3)
    assert work_sensitivity({"dev": s}, {"dev": prof.home, "x": None}, TZ) == {2: 0.0, 3: 0.0}
    t = SensitivityTally()
    t.add({2: True, 3: False})
    t2 = SensitivityTally()
    t2.add({2: False, 3: False})
    assert t.merge(t2).fractions() == {2: 0.5, 3: 0.0}


def test_funnel_ratios():
    f = FunnelReport(10, 8, 6).to_dict()
    assert (f["home_over_total"], f["commuters_over_total"], f["commuters_over_home"]) == (0.8, 0.6, 0.75)
    assert FunnelReport(0, 0, 0).to_dict()["home_over_total"] is None
