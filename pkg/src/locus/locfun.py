"""Location functionals evaluated path-wise on grid realizations.

Interval endpoints are snapped to the nearest grid point and ties are broken
leftmost everywhere. Hitting times use the piecewise-linear interpolant of
the grid path, which biases them by O(dt) against continuous time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import INF, Interval
from .procgen import Grid, MarkedPoints, Path, Realization


class IntervalOutsideWindow(ValueError):
    pass


class UnknownFunctional(ValueError):
    pass


PATH_KINDS = ("argmax", "first_hit", "last_hit", "broken_argmax")
POINT_KINDS = ("last_point", "max_mark")


def grid_span(grid: Grid, interval: Interval) -> tuple[int, int]:
    """Grid indices of the snapped endpoints of ``interval``."""
    i0, i1 = grid.index_of(interval.a), grid.index_of(interval.b)
    if i0 < 0 or i1 > grid.n - 1:
        raise IntervalOutsideWindow(
            f"[{interval.a}, {interval.b}] is not inside the grid window [{grid.t0}, {grid.t1}]")
    return i0, i1


def loc_argmax(r: Path, interval: Interval) -> float:
    i0, i1 = grid_span(r.grid, interval)
    return r.grid.time(i0 + int(np.argmax(r.values[i0:i1 + 1])))


def _hit_candidates(values: np.ndarray, grid: Grid, level: float, i0: int, i1: int):
    """Candidate hitting times per row: (times at exact grid hits, times of cell crossings)."""
    v = values[..., i0:i1 + 1] - level
    k = np.arange(i0, i1 + 1)
    at_grid = np.where(v == 0.0, grid.t0 + k * grid.dt, np.nan)
    left, right = v[..., :-1], v[..., 1:]
    crosses = left * right < 0
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = left / (left - right)
    cell = np.where(crosses, grid.t0 + k[:-1] * grid.dt + frac * grid.dt, np.nan)
    return at_grid, cell


def _hit_batch(values: np.ndarray, grid: Grid, level: float, i0: int, i1: int, first: bool) -> np.ndarray:
    at_grid, cell = _hit_candidates(values, grid, level, i0, i1)
    both = np.concatenate([at_grid, cell], axis=-1)
    fill = np.inf if first else -np.inf
    both = np.where(np.isnan(both), fill, both)
    out = both.min(axis=-1) if first else both.max(axis=-1)
    return np.where(np.isinf(out), INF, out)


def loc_hit(r: Path, level: float, interval: Interval, direction: str = "first") -> float:
    if direction not in ("first", "last"):
        raise ValueError(f"direction must be 'first' or 'last', got {direction!r}")
    i0, i1 = grid_span(r.grid, interval)
    return float(_hit_batch(r.values, r.grid, level, i0, i1, direction == "first"))


def _points_in(r: MarkedPoints, interval: Interval) -> np.ndarray:
    pos = r.positions
    return np.flatnonzero((pos >= interval.a) & (pos <= interval.b))


def loc_last_point(r: MarkedPoints, interval: Interval) -> float:
    idx = _points_in(r, interval)
    return float(r.positions[idx[-1]]) if len(idx) else INF


def loc_max_mark(r: MarkedPoints, interval: Interval) -> float:
    idx = _points_in(r, interval)
    if not len(idx):
        return INF
    # np.argmax keeps the first (leftmost) of tied marks.
    return float(r.positions[idx[int(np.argmax(r.marks[idx]))]])


@dataclass(frozen=True)
class LocationFunctional:
    """A named location functional; ``level`` is used by the hitting kinds."""

    kind: str
    level: float = 0.0

    def __post_init__(self):
        if self.kind not in PATH_KINDS + POINT_KINDS:
            raise UnknownFunctional(f"unknown functional kind {self.kind!r}")

    @property
    def name(self) -> str:
        if self.kind in ("first_hit", "last_hit"):
            return f"{self.kind}:{self.level:g}"
        return self.kind

    @property
    def on_paths(self) -> bool:
        return self.kind in PATH_KINDS

    def __call__(self, r: Realization, interval: Interval) -> float:
        if self.on_paths:
            if not isinstance(r, Path):
                raise TypeError(f"{self.name} needs a path realization")
            i0, i1 = grid_span(r.grid, interval)
            return float(self.evaluate_batch(r.values[None, :], r.grid, i0, i1)[0])
        if not isinstance(r, MarkedPoints):
            raise TypeError(f"{self.name} needs a marked point realization")
        if self.kind == "last_point":
            return loc_last_point(r, interval)
        return loc_max_mark(r, interval)

    def evaluate_batch(self, values: np.ndarray, grid: Grid, i0: int, i1: int) -> np.ndarray:
        """Locations for each row of ``values`` on the grid interval ``[i0, i1]``."""
        if self.kind == "argmax":
            return grid.t0 + (i0 + np.argmax(values[:, i0:i1 + 1], axis=1)) * grid.dt
        if self.kind == "broken_argmax":
            # Negative control: rightmost ties on odd-length spans.
            block = values[:, i0:i1 + 1]
            if (i1 - i0) % 2 == 0:
                k = np.argmax(block, axis=1)
            else:
                k = block.shape[1] - 1 - np.argmax(block[:, ::-1], axis=1)
            return grid.t0 + (i0 + k) * grid.dt
        if self.kind in ("first_hit", "last_hit"):
            return _hit_batch(values, grid, self.level, i0, i1, self.kind == "first_hit")
        raise TypeError(f"{self.name} is not a path functional")


def parse_functional(name: str) -> LocationFunctional:
    """Parse ``argmax``, ``first_hit:<level>``, ``last_hit:<level>``, ``last_point``, ``max_mark``."""
    kind, _, arg = name.strip().partition(":")
    if kind in ("first_hit", "last_hit"):
        try:
            level = float(arg)
        except ValueError:
            raise UnknownFunctional(f"{name!r}: hitting functionals need a numeric level") from None
        if not math.isfinite(level):
            raise UnknownFunctional(f"{name!r}: level must be finite")
        return LocationFunctional(kind, level)
    if arg:
        raise UnknownFunctional(f"{name!r}: {kind} takes no argument")
    return LocationFunctional(kind)
