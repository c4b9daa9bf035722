import json
import math

import numpy as np
import pytest

from locus.core import Interval, scaling_flow, translation_flow
from locus.mcengine import ExperimentConfig, estimate_density
from locus.order import WindowTooSmall
from locus.verify import (BadNesting, LadderTooShort, Verdict, XOutsideMovingInterval, _row,
                          boundary_atom_samples, check_axioms, check_boundary_atom,
                          check_boundary_explosion, check_comparison, check_conservation,
                          check_density_bound, check_eta_invariance, check_eta_relation,
                          check_flux_convergence, check_noether_invariant, check_tv_constraint,
                          eta_relation_verdict, flux_convergence_verdict, row_slack, run_checks,
                          shift_weights, total_variation, within, write_report)

OU = {"theta": 1.0, "sigma": math.sqrt(2.0)}


def small(**kw):
    base = dict(replicates=2000, grid_n=401, margin=0.5, master_seed=2)
    base.update(kw)
    return ExperimentConfig(**base)


def audit(v: Verdict):
    slack = v.recomputed_slack()
    assert (math.isnan(slack) and math.isnan(v.slack_se)) or slack == v.slack_se


def arcsine_density(bins=20, n=200_000):
    x = np.sin(np.random.default_rng(0).uniform(0, np.pi / 2, n)) ** 2
    return estimate_density(x, 0, 1, bins)


# Slack arithmetic

def test_row_slack_kinds():
    assert row_slack(_row("", 1.0, 2.0, 0.5, "le"), 3) == pytest.approx(5)
    assert row_slack(_row("", 1.0, 2.0, 0.5, "ge"), 3) == pytest.approx(1)
    assert row_slack(_row("", 1.0, 2.0, 0.5, "eq"), 3) == pytest.approx(1)
    assert row_slack(_row("", 1.0, 0.0, 0.0, "le"), 3) == -math.inf
    assert row_slack(_row("", 0.0, 0.0, 0.0, "le"), 3) == math.inf
    assert math.isnan(row_slack(_row("", 0.0, 0.0, math.nan, "le"), 3))


def test_trend_rule():
    shrinking = _row("", 0.5, 0.0, 0.01, "trend", previous=1.0, previous_se=0.01)
    growing = _row("", 2.0, 0.0, 0.01, "trend", previous=1.0, previous_se=0.01)
    assert row_slack(shrinking, 3) > 0 and row_slack(growing, 3) < 0


def test_verdict_status_rules():
    assert Verdict.from_rows("x", [_row("", 0, 1, 0.1, "le")]).status == "pass"
    assert Verdict.from_rows("x", [_row("", 2, 1, 0.1, "le")]).status == "fail"
    assert Verdict.from_rows("x", [_row("", 0, 1, math.nan, "le")]).status == "inconclusive"
    assert Verdict.from_rows("x", []).status == "inconclusive"
    mixed = Verdict.from_rows("x", [_row("", 0, 1, math.nan, "le"), _row("", 2, 1, 0.1, "le")])
    assert mixed.status == "fail"


def test_report_is_strict_json(tmp_path):
    v = Verdict.from_rows("x", [_row("", 0, 0, 0.0, "le"), _row("", 0, 1, math.nan, "le")])
    write_report([v], tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data[0]["details"][0]["slack_se"] == "inf"
    v.write_details_csv(tmp_path / "d.csv")
    assert "INF" in (tmp_path / "d.csv").read_text()


def test_within_tolerates_grid_roundoff():
    t = -0.5 + 215 * 0.0025
    assert within(t, 0.0375, 0.05) and not within(0.05, 0.0375, 0.05)


# Axioms and comparison

def test_axioms_pass_and_broken_fixture_fails():
    v = check_axioms(small(replicates=200), pairs=5)
    assert v.status == "pass" and v.observed == 0
    audit(v)
    broken = check_axioms(small(replicates=300, sampler="step", sampler_params={"segment_length": 0.3},
                                functional="broken_argmax"), pairs=10)
    assert broken.status == "fail"
    assert any(r["label"] == "witness" for r in broken.details)


def test_comparison():
    cfg = small()
    with pytest.raises(BadNesting):
        check_comparison(cfg, Interval(0, 1), Interval(0.5, 1), Interval(0.2, 0.3))
    same = check_comparison(cfg, Interval(0, 1), Interval(0, 1), Interval(0.4, 0.6), paired=True)
    assert same.status == "pass" and same.details[0]["observed"] == 0
    assert same.details[1]["observed"] == 0
    v = check_comparison(cfg, Interval(0, 1), Interval(0.2, 0.8), Interval(0.4, 0.6), paired=True)
    assert v.status == "pass" and v.details[0]["observed"] == 0
    audit(v)
    v = check_comparison(cfg, Interval(0, 1), Interval(0.2, 0.8), Interval(0.4, 0.6))
    assert v.status == "pass"


# Density checks

def test_density_bound():
    assert check_density_bound(arcsine_density()).status == "pass"
    spike = estimate_density(np.full(10_000, 0.51), 0, 1, 10)
    v = check_density_bound(spike)
    assert v.status == "fail"
    audit(v)


def test_total_variation_monotone():
    (tp, _), (tn, _), (tv, _) = total_variation(np.array([1.0, 2.0, 4.0]), np.zeros(3))
    assert (tp, tn, tv) == (3.0, 0.0, 3.0)
    (tp, _), (tn, _), _ = total_variation(np.array([3.0, 1.0, 2.0]), np.zeros(3))
    assert (tp, tn) == (1.0, 2.0)


def test_tv_arcsine():
    d = arcsine_density()
    v = check_tv_constraint(d, None, 0.2, 0.8)
    assert v.status == "pass"
    audit(v)
    with pytest.raises(ValueError):
        check_tv_constraint(d, None, 0.23, 0.8)


def test_tv_translation_weight_is_neutral():
    d = arcsine_density()
    a = check_tv_constraint(d, None, 0.2, 0.8)
    b = check_tv_constraint(d, translation_flow(0.0), 0.2, 0.8)
    assert [r["observed"] for r in a.details] == [r["observed"] for r in b.details]


def test_boundary_explosion():
    d = arcsine_density(bins=50)
    assert check_boundary_explosion(d, "left").status == "pass"
    assert check_boundary_explosion(d, "right").status == "pass"
    flat = estimate_density(np.random.default_rng(1).uniform(0, 1, 100_000), 0, 1, 50)
    assert check_boundary_explosion(flat, "left").status == "fail"
    with pytest.raises(ValueError):
        check_boundary_explosion(d, "up")


# Control measure

def test_eta_relation_deterministic():
    locs = np.array([0.5, 0.5, 0.1, 0.9])
    counts = np.array([1, 1, 0, 0])
    v = eta_relation_verdict(locs, counts, 0.3, 0.7)
    assert v.status == "pass" and v.details[0]["observed"] == 0


def test_eta_relation_preconditions():
    with pytest.raises(ValueError):
        check_eta_relation(small(), 0.7, 0.3)
    with pytest.raises(WindowTooSmall):
        check_eta_invariance(small(), (-0.5, 0.2, 0.8, 1.0), 0.1)


def test_eta_relation_brownian():
    v = check_eta_relation(small(), 0.3, 0.7)
    assert v.status == "pass"
    audit(v)


def test_eta_invariance_ou():
    cfg = small(sampler="ou", sampler_params=OU, margin=1.0)
    v = check_eta_invariance(cfg, (0.0, 0.25, 0.75, 1.0), 0.25)
    assert v.status == "pass"


# Flux

def test_shift_weights():
    assert shift_weights(np.array([0.2, 0.35, 0.6, 2.0]), 0.1, 0.5, 0.1, 4).tolist() == \
        pytest.approx([0.25, 0.5, 0.75, 0.0])
    z = np.random.default_rng(0).uniform(-1, 2, 200)
    brute = np.array([sum(0.1 + s * 0.05 <= x < 0.7 + s * 0.05 for s in range(1, 7)) / 6 for x in z])
    assert np.allclose(shift_weights(z, 0.1, 0.7, 0.05, 6), brute)
    assert np.allclose(shift_weights(z, 0.7, 0.1, 0.05, 6), -brute)


def test_conservation_brownian():
    cfg = small(replicates=4000, grid_n=801)
    v = check_conservation(cfg, [0.025], bins=10)
    assert v.status == "pass"
    audit(v)


def test_conservation_scaling_flow():
    cfg = small(a=1.0, b=math.e, flow="scaling", x0=1.0, replicates=3000, grid_n=801)
    v = check_conservation(cfg, [0.025], bins=10)
    assert v.status == "pass"


def test_flux_convergence_deterministic():
    ones = np.ones(10)
    masses = {"mu": [ones, 2 * ones, 2.5 * ones, 2.75 * ones]}
    v = flux_convergence_verdict(masses)
    assert v.status == "pass"
    assert v.details[0]["kind"] == "info"
    diverging = {"mu": [ones, 2 * ones, 4 * ones]}
    assert flux_convergence_verdict(diverging).status == "fail"


def test_flux_convergence_ladder():
    with pytest.raises(LadderTooShort):
        check_flux_convergence(small(), [0.1, 0.05])
    with pytest.raises(LadderTooShort):
        check_flux_convergence(small(), [0.1, 0.1, 0.05])


# Noether invariant

def test_noether_single_time():
    pots = []
    v = check_noether_invariant(small(replicates=1000, grid_n=801), [0.0], 0.5, potential_out=pots)
    assert v.status != "fail"
    assert pots and pots[0].K[np.argmin(np.abs(pots[0].y - pots[0].x0))] == 0


def test_noether_outside_moving_interval():
    with pytest.raises(XOutsideMovingInterval):
        check_noether_invariant(small(), [0.0, 0.6], 0.5)


# Boundary atom

def test_boundary_atom_brownian_shrinks_with_grid():
    coarse = small(replicates=3000, grid_n=201, margin=1.0)
    fine = coarse.replace(grid_n=1601)
    v = check_boundary_atom(coarse)
    assert v.status == "pass"
    a0 = boundary_atom_samples(coarse)[:, 0].mean()
    a1 = boundary_atom_samples(fine)[:, 0].mean()
    assert a1 < a0


def test_boundary_atom_window_too_small():
    with pytest.raises(WindowTooSmall):
        boundary_atom_samples(small(margin=0.5))


# Suite driver

def test_run_checks_inconclusive_without_data():
    res = run_checks(small(replicates=0), ["eta_relation"])
    assert res.verdicts[0].status == "inconclusive"


def test_run_checks_unknown_name():
    with pytest.raises(KeyError):
        run_checks(small(), ["foo"])
