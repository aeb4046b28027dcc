import io
import math

import numpy as np
import pytest
from scipy import stats

from commute_od.errors import DataQualityError
from commute_od.routing import RouteEstimate
from commute_od.trips import ODMatrix
from commute_od.validation import (
    FlowReference,
    UndefinedCorrelationError,
    commute_summary,
    compare_od,
    decile_strata,
    pair_set,
    pearson,
    pearson_p_value,
    read_reference_csv,
    write_scatter_csv,
)

from oracles import pearson_closed_form


def test_pearson_against_closed_form():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(3, 300))
        x, y = rng.normal(size=n), rng.normal(size=n)
        assert abs(pearson(x, y)[0] - pearson_closed_form(x.tolist(), y.tolist())) <= 1e-12


def test_pearson_p_value_matches_scipy():
    rng = np.random.default_rng(1)
    x = rng.normal(size=40)
    y = x + rng.normal(size=40)
    r, p = pearson(x, y)
    ref = stats.pearsonr(x, y)
    assert r == pytest.approx(ref[0], abs=1e-12)
    assert p == pytest.approx(ref[1], rel=1e-9)


def test_pearson_edge_cases():
    with pytest.raises(UndefinedCorrelationError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(UndefinedCorrelationError):
        pearson([1], [2])
    with pytest.raises(ValueError):
        pearson([1, 2], [1, 2, 3])
    assert pearson([1, 2, 3], [2, 4, 6])[0] == pytest.approx(1.0)
    assert pearson_p_value(0.61, 500) < 1e-4
    assert pearson_p_value(1.0, 10) == 0.0


GPS = ODMatrix({("A", "B"): 2.0, ("A", "C"): 1.0, ("B", "C"): 0.5})
REF = FlowReference({("A", "B"): 20.0, ("A", "C"): 11.0, ("C", "A"): 3.0})


def test_pair_modes():
    assert pair_set(GPS, REF, "union_nonzero") == [("A", "B"), ("A", "C"), ("B", "C"), ("C", "A")]
    assert pair_set(GPS, REF, "intersection_nonzero") == [("A", "B"), ("A", "C")]
    assert pair_set(GPS, REF, "ref_support") == [("A", "B"), ("A", "C"), ("C", "A")]
    with pytest.raises(ValueError):
        pair_set(GPS, REF, "everything")


def test_compare_od_zero_fills():
    rep = compare_od(GPS, REF, "union_nonzero")
    x = [2.0, 1.0, 0.5, 0.0]
    y = [20.0, 11.0, 0.0, 3.0]
    assert rep.pearson_r == pytest.approx(pearson_closed_form(x, y), abs=1e-12)
    assert rep.n_pairs == 4
    assert set(rep.by_mode) == {"union_nonzero", "intersection_nonzero", "ref_support"}
    assert rep.by_mode["intersection_nonzero"]["pearson_r"] == pytest.approx(1.0)
    with pytest.raises(DataQualityError):
        compare_od(ODMatrix(), FlowReference(), "union_nonzero")
    buf = io.StringIO()
    write_scatter_csv(rep, buf)
    assert len(buf.getvalue().splitlines()) == 5


def test_decile_strata_cover_all_pairs():
    x = np.arange(95, dtype=float)
    y = x[::-1].copy()
    strata = decile_strata(x, y)
    assert sum(s["n_pairs"] for s in strata) == 95
    assert all(s["ref_min"] <= s["ref_max"] for s in strata)


def test_reference_csv(tmp_path):
    p = tmp_path / "ref.csv"
    p.write_text("origin_tract,dest_tract,trips,stderr\nA,B,10,2\nA,B,5,\n")
    ref = read_reference_csv(str(p))
    assert ref.flows == {("A", "B"): 15.0} and ref.stderr == {("A", "B"): 2.0}
    bad = tmp_path / "bad.csv"
    bad.write_text("o,d,v\n")
    with pytest.raises(Exception):
        read_reference_csv(str(bad))
    neg = tmp_path / "neg.csv"
    neg.write_text("origin_tract,dest_tract,trips\nA,B,-1\n")
    with pytest.raises(DataQualityError):
        read_reference_csv(str(neg))


def test_commute_summary():
    est = [RouteEstimate("car", 10_000.0, 600.0 * k, "offline") for k in (1, 2, 3)]
    est.append(RouteEstimate("transit", 0.0, 0.0, "external", routable=False))
    s = commute_summary(est, 5)
    assert s["car"]["duration_min"]["mean"] == pytest.approx(20.0)
    assert s["car"]["distance_km"]["median"] == pytest.approx(10.0)
    assert sum(s["car"]["histogram"]["counts"]) == 3
    assert s["transit"] == {"attempted": 1, "routed": 0, "routable_fraction": 0.0}
    assert math.isclose(s["car"]["duration_min"]["p90"], np.percentile([10, 20, 30], 90))
