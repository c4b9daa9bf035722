"""Replicate orchestration and estimators for location samples."""

from __future__ import annotations

import csv
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Any, Callable, Sequence

import numpy as np

from . import procgen
from .binning import bin_counts, edges
from .core import Flow, Interval, make_interval, scaling_flow, translation_flow
from .locfun import LocationFunctional, grid_span, parse_functional
from .procgen import Grid, MarkedPoints, Path, SeedSpec

log = logging.getLogger(__name__)

PATH_SAMPLERS = ("brownian", "ou", "fbm", "step")
SAMPLERS = PATH_SAMPLERS + ("marked_poisson",)
FLOWS = ("translation", "scaling")
CHUNK = 512


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class ReplicateError(RuntimeError):
    def __init__(self, replicate_id: int, cause: BaseException):
        super().__init__(f"replicate {replicate_id}: {cause}")
        self.replicate_id = replicate_id


@dataclass(frozen=True)
class ExperimentConfig:
    sampler: str = "brownian"
    sampler_params: dict = field(default_factory=dict)
    functional: str = "argmax"
    a: float = 0.0
    b: float = 1.0
    flow: str = "translation"
    x0: float = 0.0
    replicates: int = 100_000
    grid_n: int = 4096
    margin: float = 2.0
    bins: int = 50
    master_seed: int = 0
    checks: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ConfigError("sampler.id", f"unknown sampler {self.sampler!r}; choose from {SAMPLERS}")
        try:
            fn = parse_functional(self.functional)
        except ValueError as exc:
            raise ConfigError("functional", str(exc)) from None
        if fn.on_paths != (self.sampler in PATH_SAMPLERS):
            raise ConfigError("functional", f"{fn.name} cannot be evaluated on {self.sampler} realizations")
        if not self.a < self.b:
            raise ConfigError("interval.a", f"need a < b, got a={self.a}, b={self.b}")
        if self.flow not in FLOWS:
            raise ConfigError("flow.id", f"unknown flow {self.flow!r}; choose from {FLOWS}")
        if self.flow == "scaling" and not (self.a > 0 or self.b < 0):
            raise ConfigError("interval.a", "for the scaling flow [a, b] must not contain the fixed point 0")
        if self.flow == "scaling" and (self.x0 == 0 or (self.x0 > 0) != (self.a > 0)):
            raise ConfigError("flow.x0", "x0 must lie in the same basin as [a, b]")
        if self.replicates < 0:
            raise ConfigError("mc.replicates", "must be non-negative")
        if self.grid_n < 2:
            raise ConfigError("mc.grid_n", "must be at least 2")
        if self.margin <= 0:
            raise ConfigError("mc.margin", "must be positive")
        if self.bins < 5:
            raise ConfigError("mc.bins", "must be at least 5")
        lo, hi = self.window
        if self.flow == "scaling" and (lo <= 0 < hi):
            raise ConfigError("mc.margin", "window must stay inside the basin of the scaling flow")
        self._check_sampler_params()

    def _check_sampler_params(self):
        p = self.sampler_params
        need = {"ou": ("theta", "sigma"), "fbm": ("hurst",), "step": ("segment_length",),
                "marked_poisson": ("rate",)}.get(self.sampler, ())
        for key in need:
            if key not in p:
                raise ConfigError(f"sampler.params.{key}", "missing")
            if not isinstance(p[key], (int, float)) or p[key] <= 0:
                raise ConfigError(f"sampler.params.{key}", f"must be a positive number, got {p[key]!r}")
        if self.sampler == "fbm" and not p["hurst"] < 1:
            raise ConfigError("sampler.params.hurst", "must lie in (0, 1)")

    @property
    def window(self) -> tuple[float, float]:
        pad = self.margin * (self.b - self.a)
        return self.a - pad, self.b + pad

    @property
    def grid(self) -> Grid:
        return Grid(*self.window, self.grid_n)

    @property
    def location_functional(self) -> LocationFunctional:
        return parse_functional(self.functional)

    @property
    def interval(self) -> Interval:
        return make_interval(self.a, self.b)

    @property
    def flow_obj(self) -> Flow:
        return translation_flow(self.x0) if self.flow == "translation" else scaling_flow(self.x0)

    def snap(self, interval: Interval) -> Interval:
        """The interval the functional actually sees (grid-snapped for path samplers)."""
        if self.sampler == "marked_poisson":
            return interval
        grid = self.grid
        i0, i1 = grid_span(grid, interval)
        return Interval(grid.time(i0), grid.time(i1))

    def replace(self, **changes) -> "ExperimentConfig":
        data = asdict(self)
        data.update(changes)
        return ExperimentConfig(**data)

    def to_dict(self) -> dict:
        return {
            "sampler": {"id": self.sampler, "params": dict(self.sampler_params)},
            "functional": self.functional,
            "interval": {"a": self.a, "b": self.b},
            "flow": {"id": self.flow, "x0": self.x0},
            "mc": {"replicates": self.replicates, "grid_n": self.grid_n, "margin": self.margin,
                   "bins": self.bins, "master_seed": self.master_seed},
            "checks": dict(self.checks),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        def section(name):
            value = data.get(name, {})
            if not isinstance(value, dict):
                raise ConfigError(name, "must be an object")
            return value

        sampler, interval, flow, mc = (section(k) for k in ("sampler", "interval", "flow", "mc"))
        kwargs: dict[str, Any] = {}
        if "id" in sampler:
            kwargs["sampler"] = sampler["id"]
        if "params" in sampler:
            kwargs["sampler_params"] = dict(sampler["params"])
        if "functional" in data:
            kwargs["functional"] = data["functional"]
        for key, dest, typ in (("a", "a", float), ("b", "b", float)):
            if key in interval:
                kwargs[dest] = _typed(interval[key], typ, f"interval.{key}")
        if "id" in flow:
            kwargs["flow"] = flow["id"]
        if "x0" in flow:
            kwargs["x0"] = _typed(flow["x0"], float, "flow.x0")
        for key, typ in (("replicates", int), ("grid_n", int), ("margin", float), ("bins", int),
                         ("master_seed", int)):
            if key in mc:
                kwargs[key] = _typed(mc[key], typ, f"mc.{key}")
        if "checks" in data:
            kwargs["checks"] = dict(section("checks"))
        unknown = set(data) - {"sampler", "functional", "interval", "flow", "mc", "checks"}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown section")
        return cls(**kwargs)


def _typed(value, typ, key):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    if typ is int and float(value) != int(value):
        raise ConfigError(key, f"expected an integer, got {value!r}")
    return typ(value)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("LOCUS_WORKERS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# Sampling

def path_batch(cfg: ExperimentConfig, replicate_ids: Sequence[int]) -> np.ndarray:
    p, grid, seed = cfg.sampler_params, cfg.grid, cfg.master_seed
    if cfg.sampler == "brownian":
        return procgen.brownian_batch(grid, seed, replicate_ids)
    if cfg.sampler == "ou":
        return procgen.ou_batch(p["theta"], p["sigma"], grid, seed, replicate_ids)
    if cfg.sampler == "fbm":
        return procgen.fbm_batch(p["hurst"], grid, seed, replicate_ids)
    if cfg.sampler == "step":
        return procgen.step_batch(p["segment_length"], grid, seed, replicate_ids)
    raise ValueError(f"{cfg.sampler} does not produce paths")


def realize(cfg: ExperimentConfig, replicate_id: int) -> procgen.Realization:
    if cfg.sampler == "marked_poisson":
        return procgen.sample_marked_poisson(cfg.sampler_params["rate"], cfg.window,
                                             SeedSpec(cfg.master_seed, replicate_id))
    return Path(cfg.grid, path_batch(cfg, [replicate_id])[0])


def _locate_chunk(cfg: ExperimentConfig, intervals: Sequence[Interval], ids: Sequence[int]) -> np.ndarray:
    fn = cfg.location_functional
    out = np.empty((len(ids), len(intervals)))
    try:
        if cfg.sampler == "marked_poisson":
            for k, rid in enumerate(ids):
                r = realize(cfg, rid)
                out[k] = [fn(r, I) for I in intervals]
            return out
        values = path_batch(cfg, ids)
        grid = cfg.grid
        for j, I in enumerate(intervals):
            i0, i1 = grid_span(grid, I)
            out[:, j] = fn.evaluate_batch(values, grid, i0, i1)
    except Exception as exc:
        raise ReplicateError(int(ids[0]), exc) from exc
    return out


def _map_chunk(cfg: ExperimentConfig, func: Callable, ids: Sequence[int]) -> list:
    results = []
    for rid in ids:
        try:
            results.append(func(realize(cfg, rid)))
        except Exception as exc:
            raise ReplicateError(int(rid), exc) from exc
    return results


def _chunks(first: int, count: int, size: int = CHUNK) -> list[range]:
    return [range(s, min(s + size, first + count)) for s in range(first, first + count, size)]


def _run(task: Callable, chunks: list[range], workers: int | None) -> list:
    workers = workers or default_workers()
    if workers <= 1 or len(chunks) <= 1:
        return [task(list(c)) for c in chunks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves chunk order, so results never depend on scheduling.
        return list(pool.map(task, [list(c) for c in chunks]))


def locate_many(cfg: ExperimentConfig, intervals: Sequence[Interval], first_replicate: int = 0,
                replicates: int | None = None, workers: int | None = None) -> np.ndarray:
    """Locations on each interval (columns) for each replicate (rows)."""
    count = cfg.replicates if replicates is None else replicates
    if count == 0:
        return np.empty((0, len(intervals)))
    parts = _run(partial(_locate_chunk, cfg, list(intervals)), _chunks(first_replicate, count), workers)
    return np.concatenate(parts, axis=0)


def map_realizations(cfg: ExperimentConfig, func: Callable, first_replicate: int = 0,
                     replicates: int | None = None, workers: int | None = None) -> list:
    """Apply ``func`` to every replicate's realization; results in replicate order."""
    count = cfg.replicates if replicates is None else replicates
    parts = _run(partial(_map_chunk, cfg, func), _chunks(first_replicate, count), workers)
    return [item for part in parts for item in part]


def run_replicates(cfg: ExperimentConfig, retain: bool = False, workers: int | None = None,
                   first_replicate: int = 0):
    """One location per replicate on the configured interval.

    Replicate ``i`` is generated from ``(master_seed, first_replicate + i)``.
    With ``retain=True`` also returns the realizations.
    """
    locs = locate_many(cfg, [cfg.interval], first_replicate=first_replicate, workers=workers)[:, 0]
    if not retain:
        return locs
    return locs, [realize(cfg, first_replicate + i) for i in range(cfg.replicates)]


# ---------------------------------------------------------------------------
# Estimators

@dataclass
class EmpiricalDensity:
    a: float
    b: float
    bin_edges: np.ndarray
    bin_density: np.ndarray
    bin_se: np.ndarray
    atom_a: tuple[float, float]
    atom_b: tuple[float, float]
    atom_inf: tuple[float, float]
    count: int

    @property
    def bins(self) -> int:
        return len(self.bin_density)

    @property
    def width(self) -> float:
        return (self.b - self.a) / self.bins

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    def total_probability(self) -> float:
        return float(self.bin_density.sum() * self.width + self.atom_a[0] + self.atom_b[0]
                     + self.atom_inf[0])

    def bin_of(self, x: float) -> int:
        return min(max(int(math.floor((x - self.a) / self.width + 1e-9)), 0), self.bins - 1)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_left", "bin_right", "density", "se"])
            for lo, hi, d, s in zip(self.bin_edges[:-1], self.bin_edges[1:], self.bin_density, self.bin_se):
                w.writerow([repr(float(lo)), repr(float(hi)), repr(float(d)), repr(float(s))])
            for label, (p, s) in (("ATOM_A", self.atom_a), ("ATOM_B", self.atom_b), ("ATOM_INF", self.atom_inf)):
                w.writerow([label, label, repr(float(p)), repr(float(s))])


def estimate_density(samples, a: float, b: float, bins: int) -> EmpiricalDensity:
    """Histogram of the interior plus exact-equality atoms at ``a``, ``b`` and infinity."""
    if bins < 5:
        raise ValueError("need at least 5 bins")
    x = np.asarray(samples, dtype=float)
    n = len(x)
    finite = x[np.isfinite(x)]
    if np.any((finite < a) | (finite > b)):
        raise ValueError(f"samples outside [{a}, {b}]")
    width = (b - a) / bins
    counts = bin_counts(x, a, b, bins)
    denom = max(n, 1)
    p = counts / denom
    se = np.sqrt(p * (1 - p) / denom) / width

    def atom(mask):
        q = float(mask.sum()) / denom
        return q, math.sqrt(q * (1 - q) / denom)

    return EmpiricalDensity(a, b, edges(a, b, bins), p / width, se, atom(x == a), atom(x == b),
                            atom(np.isinf(x)), n)


def interval_prob(samples, u: float, v: float) -> tuple[float, float]:
    """Fraction of samples in ``[u, v]`` with its binomial standard error."""
    if not u < v:
        raise ValueError(f"need u < v, got {u}, {v}")
    x = np.asarray(samples, dtype=float)
    if len(x) == 0:
        warnings.warn("interval_prob on an empty sample", RuntimeWarning, stacklevel=2)
        return 0.0, 0.0
    p = float(((x >= u) & (x <= v)).mean())
    return p, math.sqrt(p * (1 - p) / len(x))
