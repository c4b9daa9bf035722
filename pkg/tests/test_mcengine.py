import math

import numpy as np
import pytest

from locus.mcengine import (ConfigError, ExperimentConfig, estimate_density, interval_prob,
                            locate_many, run_replicates)
from locus.core import Interval


def small(**kw):
    base = dict(replicates=400, grid_n=257, margin=0.5, master_seed=1)
    base.update(kw)
    return ExperimentConfig(**base)


def test_zero_replicates():
    assert len(run_replicates(small(replicates=0))) == 0


def test_determinism_and_worker_independence():
    cfg = small(sampler="ou", sampler_params={"theta": 1.0, "sigma": 1.0})
    a = run_replicates(cfg, workers=1)
    assert np.array_equal(a, run_replicates(cfg, workers=1))
    assert np.array_equal(a, run_replicates(cfg, workers=2))
    assert not np.array_equal(a, run_replicates(cfg.replace(master_seed=2)))


def test_first_replicate_offsets_the_stream():
    cfg = small()
    full = run_replicates(cfg)
    tail = run_replicates(cfg.replace(replicates=100), first_replicate=300)
    assert np.array_equal(full[300:], tail)


def test_brownian_locations_in_interval():
    x = run_replicates(small())
    assert np.all((x >= 0) & (x <= 1))


def test_first_hit_can_be_infinite():
    x = run_replicates(small(functional="first_hit:3.0"))
    assert np.isinf(x).mean() > 0.5


def test_locate_many_columns():
    cfg = small()
    locs = locate_many(cfg, [Interval(0, 1), Interval(0.25, 0.75)])
    assert locs.shape == (cfg.replicates, 2)
    assert np.array_equal(locs[:, 0], run_replicates(cfg))


def test_density_all_infinite():
    d = estimate_density(np.full(100, math.inf), 0, 1, 10)
    assert d.atom_inf == (1.0, 0.0) and np.all(d.bin_density == 0)
    assert d.total_probability() == pytest.approx(1)


def test_density_uniform():
    x = np.random.default_rng(0).uniform(0, 1, 100_000)
    d = estimate_density(x, 0, 1, 20)
    assert np.all(np.abs(d.bin_density - 1) <= 4 * d.bin_se)
    assert d.total_probability() == pytest.approx(1)


def test_density_endpoint_atoms():
    d = estimate_density([0.0, 0.0, 1.0], 0, 1, 5)
    assert d.atom_a[0] == pytest.approx(2 / 3) and d.atom_b[0] == pytest.approx(1 / 3)
    assert d.total_probability() == pytest.approx(1)
    with pytest.raises(ValueError):
        estimate_density([1.5], 0, 1, 5)


def test_density_csv(tmp_path):
    d = estimate_density([0.1, 0.5, math.inf], 0, 1, 5)
    d.to_csv(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "bin_left,bin_right,density,se"
    assert lines[-1].startswith("ATOM_INF,ATOM_INF,0.333")


def test_interval_prob():
    with pytest.warns(RuntimeWarning):
        assert interval_prob([], 0, 1) == (0.0, 0.0)
    p, se = interval_prob([0.1, 0.3, 0.6, 0.9], 0.25, 0.5)
    assert p == 0.25 and se == pytest.approx(math.sqrt(0.25 * 0.75 / 4))
    with pytest.raises(ValueError):
        interval_prob([0.1], 1, 0)


def test_stationarity_consistency():
    cfg = small(sampler="ou", sampler_params={"theta": 1.0, "sigma": 1.0}, replicates=4000)
    x0 = locate_many(cfg, [Interval(0, 1)])[:, 0]
    x1 = locate_many(cfg, [Interval(0.5, 1.5)], first_replicate=4000)[:, 0] - 0.5
    p0, s0 = interval_prob(x0, 0.2, 0.4)
    p1, s1 = interval_prob(x1, 0.2, 0.4)
    assert abs(p0 - p1) <= 4 * math.hypot(s0, s1)


@pytest.mark.parametrize("kwargs,key", [
    (dict(a=1.0, b=0.0), "interval.a"),
    (dict(sampler="nope"), "sampler.id"),
    (dict(functional="median"), "functional"),
    (dict(sampler="marked_poisson", sampler_params={"rate": 1.0}), "functional"),
    (dict(sampler="ou", sampler_params={"theta": 1.0}), "sampler.params.sigma"),
    (dict(sampler="fbm", sampler_params={"hurst": 1.5}), "sampler.params.hurst"),
    (dict(flow="scaling", x0=1.0), "interval.a"),
    (dict(flow="scaling", a=1.0, b=2.0, x0=-1.0), "flow.x0"),
    (dict(replicates=-1), "mc.replicates"),
    (dict(bins=2), "mc.bins"),
    (dict(margin=0.0), "mc.margin"),
])
def test_config_validation(kwargs, key):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig(**kwargs)
    assert info.value.key == key


def test_config_round_trip():
    cfg = ExperimentConfig(sampler="step", sampler_params={"segment_length": 0.5}, a=-1.0, b=2.0,
                           replicates=10, grid_n=100, margin=1.0, bins=8, master_seed=3,
                           checks={"k": 2.5})
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"bogus": {}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"mc": {"replicates": 1.5}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"mc": {"replicates": True}})


def test_snap_is_grid_aligned():
    cfg = small(a=0.0, b=1.0, grid_n=201, margin=0.5)
    I = cfg.snap(Interval(0.101, 0.899))
    grid = cfg.grid
    for t in I:
        assert abs((t - grid.t0) / grid.dt - round((t - grid.t0) / grid.dt)) < 1e-9
