"""The order a location functional induces on a path, its reach triples, and
empirical versions of the control and flux measures.

For a point ``x`` of the location set, the reach triple ``(l, x, r)`` records
the nearest points on either side that the functional prefers over ``x``.
Reaches that leave the simulated window are censored and stored as -inf/+inf.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from .binning import bin_indices, edges
from .core import INF, Interval
from .locfun import LocationFunctional, grid_span
from .procgen import MarkedPoints, Path, Realization


class NotInWindow(ValueError):
    pass


class MalformedBox(ValueError):
    pass


class EpsilonTooLarge(ValueError):
    pass


class WindowTooSmall(ValueError):
    pass


class CensoringWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ReachTriple:
    l: float
    x: float
    r: float

    @property
    def l_censored(self) -> bool:
        return math.isinf(self.l)

    @property
    def r_censored(self) -> bool:
        return math.isinf(self.r)


# ---------------------------------------------------------------------------
# Generic scans: evaluate the functional on subintervals.

def _candidates(r: Realization, fn: LocationFunctional, window: tuple[float, float]) -> np.ndarray:
    """Points of the location set at grid resolution inside ``window``."""
    lo, hi = window
    if isinstance(r, MarkedPoints):
        pos = r.positions
        return pos[(pos >= lo) & (pos <= hi)]
    grid = r.grid
    k0 = max(grid.index_of(lo), 0)
    k1 = min(grid.index_of(hi), grid.n - 1)
    found = set()
    for k in range(k0, k1):
        loc = fn(r, Interval(grid.time(k), grid.time(k + 1)))
        if not math.isinf(loc):
            found.add(loc)
    return np.array(sorted(found))


def _prefers(r: Realization, fn: LocationFunctional, x: float, y: float) -> bool:
    """Whether ``x ≼ y``: the functional picks ``y`` on the span of the two points."""
    lo, hi = min(x, y), max(x, y)
    if isinstance(r, Path):
        grid = r.grid
        lo = grid.time(int(math.floor((lo - grid.t0) / grid.dt + 1e-9)))
        hi = grid.time(int(math.ceil((hi - grid.t0) / grid.dt - 1e-9)))
    return fn(r, Interval(lo, hi)) == y


def reach_triple(r: Realization, fn: LocationFunctional, x: float,
                 window: tuple[float, float]) -> ReachTriple:
    """Reach triple of ``x`` by outward scans over the location set (quadratic cost)."""
    lo, hi = window
    if not lo <= x <= hi:
        raise NotInWindow(f"x={x} is outside the window {window}")
    if isinstance(r, Path):
        grid = r.grid
        if abs(grid.snap(x) - x) > 1e-9 * max(1.0, abs(x)) and fn.kind in ("argmax", "broken_argmax"):
            raise NotInWindow(f"x={x} is not a grid point")
        lo, hi = max(lo, grid.t0), min(hi, grid.t1)
    cands = _candidates(r, fn, (lo, hi))
    left = INF
    for y in cands[cands < x][::-1]:
        if _prefers(r, fn, x, y):
            left = float(y)
            break
    right = INF
    for y in cands[cands > x]:
        if _prefers(r, fn, x, y):
            right = float(y)
            break
    return ReachTriple(-INF if math.isinf(left) else left, float(x), right)


def scan_triples(r: Realization, fn: LocationFunctional,
                 eval_window: tuple[float, float],
                 window: tuple[float, float] | None = None) -> list[ReachTriple]:
    """Reach triples for every point of the location set inside ``eval_window``.

    Argmax on paths takes the linear-time route; every other functional is
    scanned naively.
    """
    if isinstance(r, Path) and fn.kind == "argmax":
        return argmax_triples(r, eval_window)
    if window is None:
        window = r.window if isinstance(r, MarkedPoints) else (r.grid.t0, r.grid.t1)
    lo, hi = eval_window
    return [reach_triple(r, fn, float(x), window)
            for x in _candidates(r, fn, window) if lo <= x <= hi]


# ---------------------------------------------------------------------------
# Argmax fast path: nearest left value >= and nearest right value >.

@numba.njit(cache=True)
def argmax_reach_indices(values):
    """Per grid index, the nearest left index with a value >= and the nearest
    right index with a value > (-1 / n when none)."""
    n = values.shape[0]
    left = np.empty(n, dtype=np.int64)
    right = np.empty(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    top = 0
    for i in range(n):
        while top > 0 and values[stack[top - 1]] < values[i]:
            top -= 1
        left[i] = stack[top - 1] if top > 0 else -1
        stack[top] = i
        top += 1
    top = 0
    for i in range(n - 1, -1, -1):
        while top > 0 and values[stack[top - 1]] <= values[i]:
            top -= 1
        right[i] = stack[top - 1] if top > 0 else n
        stack[top] = i
        top += 1
    return left, right


def argmax_in_set(values: np.ndarray) -> np.ndarray:
    """Grid points that are the leftmost argmax of a one-cell interval."""
    member = np.zeros(values.shape[0], dtype=bool)
    member[:-1] |= values[:-1] >= values[1:]
    member[1:] |= values[1:] > values[:-1]
    return member


def argmax_triple_arrays(r: Path, eval_window: tuple[float, float]):
    """Arrays ``(l, x, r)`` of argmax triples with ``x`` in ``eval_window``."""
    grid = r.grid
    k0 = max(grid.index_of(eval_window[0]), 0)
    k1 = min(grid.index_of(eval_window[1]), grid.n - 1)
    left, right = argmax_reach_indices(np.ascontiguousarray(r.values))
    idx = np.arange(k0, k1 + 1)
    idx = idx[argmax_in_set(r.values)[idx]]
    times = grid.t0 + np.arange(grid.n) * grid.dt
    lv = np.where(left[idx] >= 0, times[np.clip(left[idx], 0, None)], -INF)
    rv = np.where(right[idx] < grid.n, times[np.clip(right[idx], None, grid.n - 1)], INF)
    return lv, times[idx], rv


def argmax_triples(r: Path, eval_window: tuple[float, float]) -> list[ReachTriple]:
    lv, xv, rv = argmax_triple_arrays(r, eval_window)
    return [ReachTriple(float(a), float(b), float(c)) for a, b, c in zip(lv, xv, rv)]


# ---------------------------------------------------------------------------
# Empirical control measure.

@dataclass
class EmpiricalMeasure3D:
    """Pooled reach triples with the replicate each came from."""

    l: np.ndarray
    x: np.ndarray
    r: np.ndarray
    replicate: np.ndarray
    replicate_count: int
    window: tuple[float, float] | None = field(default=None)

    @classmethod
    def from_triples(cls, per_replicate: Sequence[Sequence[ReachTriple]],
                     window: tuple[float, float] | None = None) -> "EmpiricalMeasure3D":
        rows = [(t.l, t.x, t.r, i) for i, ts in enumerate(per_replicate) for t in ts]
        arr = np.array(rows, dtype=float).reshape(-1, 4)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3].astype(np.int64),
                   len(per_replicate), window)

    @classmethod
    def from_arrays(cls, parts: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
                    window: tuple[float, float] | None = None) -> "EmpiricalMeasure3D":
        l = np.concatenate([p[0] for p in parts]) if parts else np.empty(0)
        x = np.concatenate([p[1] for p in parts]) if parts else np.empty(0)
        r = np.concatenate([p[2] for p in parts]) if parts else np.empty(0)
        rep = np.concatenate([np.full(len(p[1]), i) for i, p in enumerate(parts)]) if parts else np.empty(0, int)
        return cls(l, x, r, rep.astype(np.int64), len(parts), window)

    def merge(self, other: "EmpiricalMeasure3D") -> "EmpiricalMeasure3D":
        return EmpiricalMeasure3D(
            np.concatenate([self.l, other.l]), np.concatenate([self.x, other.x]),
            np.concatenate([self.r, other.r]),
            np.concatenate([self.replicate, other.replicate + self.replicate_count]),
            self.replicate_count + other.replicate_count, self.window)

    def to_csv_rows(self):
        for rep, l, x, r in zip(self.replicate, self.l, self.x, self.r):
            yield (int(rep), "INF" if math.isinf(l) else l, x, "INF" if math.isinf(r) else r,
                   int(math.isinf(l)), int(math.isinf(r)))


def box_counts(m: EmpiricalMeasure3D, box: tuple[float, float, float, float]) -> np.ndarray:
    """Per-replicate counts of triples in ``(-inf, z1) x (z2lo, z2hi) x (z3, inf)``."""
    z1, lo, hi, z3 = box
    if not lo < hi:
        raise MalformedBox(f"box needs z2_lo < z2_hi, got {box}")
    if m.window is not None and (z1 < m.window[0] or z3 > m.window[1]):
        warnings.warn(f"box {box} reaches past the window {m.window}; censored reaches "
                      "may bias the estimate", CensoringWarning, stacklevel=3)
    hit = (m.l < z1) & (m.x > lo) & (m.x < hi) & (m.r > z3)
    return np.bincount(m.replicate[hit], minlength=m.replicate_count)


def eta_box(m: EmpiricalMeasure3D, box: tuple[float, float, float, float]) -> tuple[float, float]:
    """Mean count per replicate in the box, with its standard error."""
    counts = box_counts(m, box)
    if m.replicate_count == 0:
        return 0.0, 0.0
    se = counts.std(ddof=1) / math.sqrt(m.replicate_count) if m.replicate_count > 1 else 0.0
    return float(counts.mean()), float(se)


# ---------------------------------------------------------------------------
# Flux measures.

@dataclass
class FluxEstimate:
    """Left-exit and right-entry flux at one epsilon, binned on ``(a, b)``.

    ``mu_hist``/``nu_hist`` hold bin masses already scaled by ``1/epsilon``.
    """

    epsilon: float
    a: float
    b: float
    bin_edges: np.ndarray
    M: float
    M_se: float
    mu_hist: np.ndarray
    mu_se: np.ndarray
    N: float
    N_se: float
    nu_hist: np.ndarray
    nu_se: np.ndarray
    replicates: int

    def mass(self, which: str, u: float, v: float) -> tuple[float, float]:
        """Scaled mass of ``mu`` or ``nu`` on the bins inside ``[u, v]``, with SE."""
        hist, se = (self.mu_hist, self.mu_se) if which == "mu" else (self.nu_hist, self.nu_se)
        centers = 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])
        sel = (centers >= u) & (centers <= v)
        total = float(hist[sel].sum())
        # Bin counts are multinomial; the SE of a sum of cells is binomial in the total.
        p = total * self.epsilon
        return total, float(math.sqrt(max(p * (1 - p), 0.0) / max(self.replicates, 1)) / self.epsilon)


def flux_from_locations(old: np.ndarray, new: np.ndarray, a: float, b: float,
                        new_a: float, new_b: float, bins: int) -> FluxEstimate:
    """Flux estimate from paired locations on ``[a, b]`` and on the shifted ``[new_a, new_b]``.

    The left-exit event is ``old`` in ``[a, new_a)``; the right-entry event is
    ``new`` in ``(b, new_b]``. The effective epsilon is ``new_a - a``.
    """
    old = np.asarray(old, dtype=float)
    new = np.asarray(new, dtype=float)
    eps = new_a - a
    n = len(old)
    left_exit = (old >= a) & (old < new_a)
    right_entry = (new > b) & (new <= new_b)
    e = edges(a, b, bins)

    def scaled_hist(samples):
        idx = bin_indices(samples, a, b, bins)
        counts = np.bincount(idx[idx >= 0], minlength=bins).astype(float)
        p = counts / max(n, 1)
        se = np.sqrt(p * (1 - p) / max(n, 1)) / eps
        return p / eps, se

    mu_hist, mu_se = scaled_hist(new[left_exit])
    nu_hist, nu_se = scaled_hist(old[right_entry])
    M = float(left_exit.mean()) if n else 0.0
    N = float(right_entry.mean()) if n else 0.0
    se = lambda p: math.sqrt(p * (1 - p) / n) if n else 0.0  # noqa: E731
    return FluxEstimate(eps, a, b, e, M, se(M), mu_hist, mu_se, N, se(N), nu_hist, nu_se, n)


def empirical_flux(rs: Sequence[Realization], fn: LocationFunctional, a: float, b: float,
                   eps: float, bins: int) -> FluxEstimate:
    if not 0 < eps < (b - a) / 4:
        raise EpsilonTooLarge(f"eps={eps} must lie in (0, (b - a)/4) = (0, {(b - a) / 4})")
    old_i, new_i = Interval(a, b), Interval(a + eps, b + eps)
    old = np.array([fn(r, old_i) for r in rs], dtype=float)
    new = np.array([fn(r, new_i) for r in rs], dtype=float)
    new_a, new_b = a + eps, b + eps
    if rs and isinstance(rs[0], Path):
        # Use the snapped shifted interval so the events match what was evaluated.
        grid = rs[0].grid
        i0, i1 = grid_span(grid, new_i)
        j0, j1 = grid_span(grid, old_i)
        a, b = grid.time(j0), grid.time(j1)
        new_a, new_b = grid.time(i0), grid.time(i1)
    return flux_from_locations(old, new, a, b, new_a, new_b, bins)
