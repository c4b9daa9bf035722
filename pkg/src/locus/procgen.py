"""Reproducible samplers for the test-bed processes.

Every replicate draws from its own Philox stream keyed by
``SeedSequence(master_seed, spawn_key=(replicate_id,))``, so a replicate is
the same whichever worker generates it and in whatever order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path as FsPath
from typing import Sequence, Union

import numpy as np
from scipy.signal import lfilter

MAX_FBM_POINTS = 8192


class GridTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    t0: float
    t1: float
    n: int

    def __post_init__(self):
        if not self.t0 < self.t1:
            raise ValueError(f"grid needs t0 < t1, got {self.t0}, {self.t1}")
        if self.n < 2:
            raise ValueError("grid needs at least two points")

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / (self.n - 1)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n) * self.dt

    def time(self, i: int) -> float:
        return self.t0 + i * self.dt

    def index_of(self, x: float) -> int:
        """Nearest grid index to ``x`` (may fall outside ``[0, n)``)."""
        return int(round((x - self.t0) / self.dt))

    def snap(self, x: float) -> float:
        return self.time(self.index_of(x))


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    replicate_id: int = 0


@dataclass(frozen=True, eq=False)
class Path:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        if len(self.values) != self.grid.n:
            raise ValueError("path length does not match its grid")

    def __add__(self, c: float) -> "Path":
        return Path(self.grid, self.values + c)


@dataclass(frozen=True, eq=False)
class MarkedPoints:
    window: tuple[float, float]
    positions: np.ndarray
    marks: np.ndarray


Realization = Union[Path, MarkedPoints]


def rng_for(seed: SeedSpec) -> np.random.Generator:
    ss = np.random.SeedSequence(seed.master_seed, spawn_key=(seed.replicate_id,))
    return np.random.Generator(np.random.Philox(ss))


def _rows(master_seed: int, replicate_ids: Sequence[int], width: int) -> np.ndarray:
    out = np.empty((len(replicate_ids), width))
    for k, rid in enumerate(replicate_ids):
        out[k] = rng_for(SeedSpec(master_seed, int(rid))).standard_normal(width)
    return out


# Batch samplers: one row per replicate id, bit-identical to the single-path samplers.

def brownian_batch(grid: Grid, master_seed: int, replicate_ids: Sequence[int]) -> np.ndarray:
    z = _rows(master_seed, replicate_ids, grid.n - 1)
    out = np.zeros((len(replicate_ids), grid.n))
    np.cumsum(z * math.sqrt(grid.dt), axis=1, out=out[:, 1:])
    return out


def ou_batch(theta: float, sigma: float, grid: Grid, master_seed: int,
             replicate_ids: Sequence[int]) -> np.ndarray:
    if theta <= 0 or sigma <= 0:
        raise ValueError("OU needs theta > 0 and sigma > 0")
    rho = math.exp(-theta * grid.dt)
    stationary_sd = sigma / math.sqrt(2 * theta)
    step_sd = stationary_sd * math.sqrt(-math.expm1(-2 * theta * grid.dt))
    z = _rows(master_seed, replicate_ids, grid.n)
    z[:, 0] *= stationary_sd
    z[:, 1:] *= step_sd
    return lfilter([1.0], [1.0, -rho], z, axis=1)


@lru_cache(maxsize=8)
def _fbm_factor(hurst: float, dt: float, n: int) -> np.ndarray:
    t = dt * np.arange(1, n)
    s, u = np.meshgrid(t, t, indexing="ij")
    cov = 0.5 * (s ** (2 * hurst) + u ** (2 * hurst) - np.abs(s - u) ** (2 * hurst))
    factor = np.linalg.cholesky(cov)
    factor.setflags(write=False)
    return factor


def fbm_batch(hurst: float, grid: Grid, master_seed: int,
              replicate_ids: Sequence[int]) -> np.ndarray:
    if not 0 < hurst < 1:
        raise ValueError("Hurst index must lie in (0, 1)")
    if grid.n > MAX_FBM_POINTS:
        raise GridTooLarge(f"fBm covariance factorization limited to {MAX_FBM_POINTS} points")
    factor = _fbm_factor(float(hurst), grid.dt, grid.n)
    z = _rows(master_seed, replicate_ids, grid.n - 1)
    out = np.zeros((len(replicate_ids), grid.n))
    # Row by row: a batched matmul may round differently with the batch size.
    for k in range(len(replicate_ids)):
        out[k, 1:] = factor @ z[k]
    return out


@dataclass(frozen=True)
class StepSegments:
    """Raw ingredients of a step-process realization.

    Segment ``first_index + j`` covers times ``t`` with
    ``floor((t + offset) / segment_length) == first_index + j`` and carries
    ``levels[j]``.
    """

    segment_length: float
    offset: float
    first_index: int
    levels: np.ndarray

    def segment_of(self, t) -> np.ndarray:
        return np.floor((np.asarray(t) + self.offset) / self.segment_length).astype(np.int64)

    def level_at(self, t) -> np.ndarray:
        return self.levels[self.segment_of(t) - self.first_index]


def step_segments(segment_length: float, grid: Grid, seed: SeedSpec) -> StepSegments:
    if segment_length <= 0:
        raise ValueError("segment_length must be positive")
    rng = rng_for(seed)
    offset = rng.uniform(0.0, segment_length)
    first = int(math.floor((grid.t0 + offset) / segment_length))
    last = int(math.floor((grid.t1 + offset) / segment_length))
    levels = rng.standard_normal(last - first + 1)
    return StepSegments(segment_length, offset, first, levels)


def step_batch(segment_length: float, grid: Grid, master_seed: int,
               replicate_ids: Sequence[int]) -> np.ndarray:
    times = grid.times
    out = np.empty((len(replicate_ids), grid.n))
    for k, rid in enumerate(replicate_ids):
        out[k] = step_segments(segment_length, grid, SeedSpec(master_seed, int(rid))).level_at(times)
    return out


def sample_brownian(grid: Grid, seed: SeedSpec) -> Path:
    return Path(grid, brownian_batch(grid, seed.master_seed, [seed.replicate_id])[0])


def sample_ou(theta: float, sigma: float, grid: Grid, seed: SeedSpec) -> Path:
    return Path(grid, ou_batch(theta, sigma, grid, seed.master_seed, [seed.replicate_id])[0])


def sample_fbm(hurst: float, grid: Grid, seed: SeedSpec) -> Path:
    return Path(grid, fbm_batch(hurst, grid, seed.master_seed, [seed.replicate_id])[0])


def sample_step_process(segment_length: float, grid: Grid, seed: SeedSpec) -> Path:
    return Path(grid, step_segments(segment_length, grid, seed).level_at(grid.times))


def sample_marked_poisson(rate: float, window: tuple[float, float], seed: SeedSpec) -> MarkedPoints:
    lo, hi = window
    if rate <= 0:
        raise ValueError("rate must be positive")
    if not lo < hi:
        raise ValueError(f"window must be nonempty, got {window}")
    rng = rng_for(seed)
    count = rng.poisson(rate * (hi - lo))
    positions = np.sort(rng.uniform(lo, hi, count))
    marks = rng.standard_normal(count)
    return MarkedPoints((float(lo), float(hi)), positions, marks)


def dump_csv(realization: Realization, path) -> None:
    """Write a realization for debugging: ``t,value`` or ``position,mark``."""
    path = FsPath(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        if isinstance(realization, Path):
            writer.writerow(["t", "value"])
            writer.writerows(zip(realization.grid.times.tolist(), realization.values.tolist()))
        else:
            writer.writerow(["position", "mark"])
            writer.writerows(zip(realization.positions.tolist(), realization.marks.tolist()))
