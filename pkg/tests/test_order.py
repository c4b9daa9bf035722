import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from locus.core import INF, Interval
from locus.locfun import LocationFunctional
from locus.order import (CensoringWarning, EmpiricalMeasure3D, EpsilonTooLarge, MalformedBox,
                         NotInWindow, ReachTriple, argmax_triples, box_counts, empirical_flux,
                         eta_box, flux_from_locations, reach_triple, scan_triples)
from locus.procgen import Grid, MarkedPoints, Path, SeedSpec, sample_brownian, sample_ou

ARGMAX = LocationFunctional("argmax")


def path(values):
    v = np.asarray(values, dtype=float)
    return Path(Grid(0, len(v) - 1, len(v)), v)


def test_reach_triple_examples():
    r = path([3, 1, 2, 1, 4])
    assert reach_triple(r, ARGMAX, 2.0, (0, 4)) == ReachTriple(0.0, 2.0, 4.0)
    inc = path([0, 1, 2, 3, 4, 5])
    t = reach_triple(inc, ARGMAX, 3.0, (0, 5))
    assert t.l_censored and t.r == 4.0
    const = path([1, 1, 1, 1, 1])
    t = reach_triple(const, ARGMAX, 2.0, (0, 4))
    assert t.l == 1.0 and t.r_censored


def test_reach_triple_not_in_window():
    with pytest.raises(NotInWindow):
        reach_triple(path([1, 2, 3]), ARGMAX, 5.0, (0, 2))
    with pytest.raises(NotInWindow):
        reach_triple(path([1, 2, 3]), ARGMAX, 0.5, (0, 2))


def test_scan_single_global_max():
    r = path([0, 1, 2, 5, 2, 1, 0])
    triples = scan_triples(r, ARGMAX, (0, 6))
    top = [t for t in triples if t.x == 3.0]
    assert top and top[0].l_censored and top[0].r_censored


def test_scan_monotone_path_has_no_interior_triple():
    r = path(np.arange(10.0))
    for t in scan_triples(r, ARGMAX, (0, 9)):
        assert t.l_censored or t.r_censored or t.r == t.x + 1


def test_last_point_triples():
    mp = MarkedPoints((0.0, 3.0), np.array([0.5, 1.2, 2.4]), np.zeros(3))
    fn = LocationFunctional("last_point")
    triples = scan_triples(mp, fn, (0, 3))
    assert [t.x for t in triples] == [0.5, 1.2, 2.4]
    assert [t.r for t in triples] == [1.2, 2.4, INF]
    assert all(t.l_censored for t in triples)


def test_fast_path_matches_naive_scan():
    g = Grid(0, 1, 41)
    for rid in range(100):
        r = sample_ou(1.0, 1.0, g, SeedSpec(3, rid)) if rid % 2 else sample_brownian(g, SeedSpec(3, rid))
        if rid % 5 == 0:
            r = Path(g, np.round(r.values, 1))  # force ties
        fast = argmax_triples(r, (0, 1))
        naive = [reach_triple(r, ARGMAX, float(t.x), (0, 1)) for t in fast]
        assert fast == naive
        xs = {t.x for t in fast}
        members = {float(g.time(k)) for k in range(g.n - 1)
                   if ARGMAX(r, Interval(g.time(k), g.time(k + 1))) == g.time(k)}
        members |= {float(g.time(k)) for k in range(1, g.n)
                    if ARGMAX(r, Interval(g.time(k - 1), g.time(k))) == g.time(k)}
        assert xs == members


def test_eta_box_examples():
    empty = EmpiricalMeasure3D.from_triples([[] for _ in range(10)])
    assert eta_box(empty, (0, 0.2, 0.8, 1)) == (0.0, 0.0)
    one = EmpiricalMeasure3D.from_triples([[ReachTriple(-INF, 0.5, INF)] for _ in range(100)])
    assert eta_box(one, (0, 0.2, 0.8, 1)) == (1.0, 0.0)
    with pytest.raises(MalformedBox):
        eta_box(one, (0, 0.8, 0.2, 1))


def test_eta_box_warns_beyond_window():
    m = EmpiricalMeasure3D.from_triples([[ReachTriple(-INF, 0.5, INF)]], window=(0, 1))
    with pytest.warns(CensoringWarning):
        box_counts(m, (-1, 0.2, 0.8, 2))


def test_at_most_one_triple_per_box_and_eta_relation():
    g = Grid(-2, 3, 501)
    parts, locs = [], []
    for rid in range(2000):
        r = sample_brownian(g, SeedSpec(4, rid))
        ts = argmax_triples(r, (0, 1))
        parts.append(ts)
        locs.append(ARGMAX(r, Interval(0, 1)))
    m = EmpiricalMeasure3D.from_triples(parts, window=(-2, 3))
    counts = box_counts(m, (0, 0, 1, 1))
    assert counts.max() <= 1
    est, se = eta_box(m, (0, 0.3, 0.7, 1))
    locs = np.array(locs)
    p = np.mean((locs > 0.3) & (locs < 0.7))
    assert abs(est - p) <= 3 * max(se, 1e-12)


def test_measure_merge_and_csv_rows():
    a = EmpiricalMeasure3D.from_triples([[ReachTriple(-INF, 0.5, 1.0)]])
    b = EmpiricalMeasure3D.from_triples([[], [ReachTriple(0.1, 0.2, INF)]])
    m = a.merge(b)
    assert m.replicate_count == 3 and m.replicate.tolist() == [0, 2]
    rows = list(m.to_csv_rows())
    assert rows[0] == (0, "INF", 0.5, 1.0, 1, 0)
    assert rows[1] == (2, 0.1, 0.2, "INF", 0, 1)


def test_flux_null_and_point_mass():
    old = np.full(50, 0.5)
    est = flux_from_locations(old, old, 0.0, 1.0, 0.1, 1.1, 10)
    assert est.M == 0 and np.all(est.mu_hist == 0)
    est = flux_from_locations(np.zeros(50), np.full(50, 0.55), 0.0, 1.0, 0.1, 1.1, 10)
    assert est.M == 1
    assert est.mu_hist[5] == pytest.approx(1 / 0.1) and est.mu_hist.sum() == pytest.approx(10)


def test_empirical_flux_rejects_large_eps():
    g = Grid(-1, 3, 101)
    rs = [sample_brownian(g, SeedSpec(0, i)) for i in range(3)]
    with pytest.raises(EpsilonTooLarge):
        empirical_flux(rs, ARGMAX, 0.0, 1.0, 0.3, 10)


def test_empirical_flux_mass_stable_across_eps():
    g = Grid(-1, 3, 801)
    rs = [sample_ou(1.0, math.sqrt(2), g, SeedSpec(5, i)) for i in range(3000)]
    masses = []
    for eps in (0.05, 0.025):
        est = empirical_flux(rs, ARGMAX, 0.0, 2.0, eps, 40)
        assert 0 <= est.M <= 1 and np.all(est.mu_hist >= 0)
        masses.append(est.mass("mu", 0.5, 1.5))
    (m1, s1), (m2, s2) = masses
    assert abs(m1 - m2) <= 3 * math.hypot(s1, s2)


@settings(max_examples=100, deadline=None)
@given(v=st.lists(st.integers(-2, 2), min_size=2, max_size=25))
def test_triples_are_ordered(v):
    r = path(v)
    for t in argmax_triples(r, (0, len(v) - 1)):
        assert t.l < t.x < t.r
