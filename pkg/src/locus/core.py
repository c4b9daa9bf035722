"""Intervals, location values and one-parameter flows on the real line.

A location is a plain float: a finite point, or ``math.inf`` for the
distinguished value returned when a functional has no answer on an interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

INF = math.inf

FIXED_POINT_RTOL = 1e-9
TAU_RTOL = 1e-12
MAX_BISECTION_STEPS = 200
FD_STEP = 1e-5


class DegenerateInterval(ValueError):
    pass


class EvaluationFailure(RuntimeError):
    pass


class AtFixedPoint(ValueError):
    pass


class OutOfBasin(ValueError):
    def __init__(self, message: str, indices: Sequence[int] = ()):
        super().__init__(message)
        self.indices = list(indices)


class NoConvergence(RuntimeError):
    pass


def is_infinite(loc: float) -> bool:
    return math.isinf(loc)


@dataclass(frozen=True)
class Interval:
    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise DegenerateInterval(f"interval needs a < b, got [{self.a}, {self.b}]")

    @property
    def length(self) -> float:
        return self.b - self.a

    def contains(self, x: float) -> bool:
        return self.a <= x <= self.b

    def shifted(self, c: float) -> "Interval":
        return Interval(self.a + c, self.b + c)

    def __iter__(self):
        yield self.a
        yield self.b


def make_interval(a: float, b: float) -> Interval:
    return Interval(float(a), float(b))


FlowEvaluator = Callable[[float, float], float]


@dataclass(frozen=True)
class Flow:
    """A one-parameter group of increasing maps of the line.

    ``kind`` is ``"translation"``, ``"scaling"`` or ``"custom"``; custom
    flows supply ``evaluator(x, t)`` and their fixed points. The time axis
    is stored oriented so that ``t -> phi^t(x0)`` increases.
    """

    kind: str
    reference_x0: float = 0.0
    fixed_points: tuple[float, ...] = ()
    evaluator: FlowEvaluator | None = field(default=None, compare=False)
    orientation: int = field(default=1, init=False)

    def __post_init__(self):
        if self.kind not in ("translation", "scaling", "custom"):
            raise ValueError(f"unknown flow kind {self.kind!r}")
        if self.kind == "custom" and self.evaluator is None:
            raise ValueError("custom flow needs an evaluator")
        fps = tuple(sorted(float(p) for p in self.fixed_points))
        if self.kind == "scaling":
            fps = (0.0,)
        elif self.kind == "translation":
            fps = ()
        if any(b - a <= 0 for a, b in zip(fps, fps[1:])):
            raise ValueError("fixed points must be distinct (isolated)")
        object.__setattr__(self, "fixed_points", fps)
        x0 = float(self.reference_x0)
        if _near_fixed_point(fps, x0):
            raise ValueError(f"reference point {x0} sits on a fixed point")
        probe = self._raw(x0, 1e-3) - self._raw(x0, -1e-3)
        object.__setattr__(self, "orientation", 1 if probe > 0 else -1)

    def _raw(self, x: float, t: float) -> float:
        if self.kind == "translation":
            return x + t
        if self.kind == "scaling":
            return math.exp(t) * x
        try:
            value = float(self.evaluator(x, t))
        except Exception as exc:  # noqa: BLE001 - supplier code
            raise EvaluationFailure(f"custom flow failed at x={x}, t={t}: {exc}") from exc
        if not math.isfinite(value):
            raise EvaluationFailure(f"custom flow returned {value} at x={x}, t={t}")
        return value

    @property
    def basin(self) -> tuple[float, float]:
        """Open interval between the consecutive extended fixed points around x0."""
        lo, hi = -INF, INF
        for p in self.fixed_points:
            if p < self.reference_x0:
                lo = p
            elif p > self.reference_x0:
                hi = p
                break
        return lo, hi

    def in_basin(self, x: float) -> bool:
        lo, hi = self.basin
        return lo < x < hi and not _near_fixed_point(self.fixed_points, x)


def _near_fixed_point(fixed_points: Iterable[float], x: float) -> bool:
    tol = FIXED_POINT_RTOL * (1.0 + abs(x))
    return any(abs(x - p) <= tol for p in fixed_points)


def translation_flow(x0: float = 0.0) -> Flow:
    return Flow("translation", reference_x0=x0)


def scaling_flow(x0: float = 1.0) -> Flow:
    return Flow("scaling", reference_x0=x0)


def custom_flow(evaluator: FlowEvaluator, fixed_points: Sequence[float], x0: float) -> Flow:
    return Flow("custom", reference_x0=x0, fixed_points=tuple(fixed_points), evaluator=evaluator)


def flow_eval(flow: Flow, x: float, t: float) -> float:
    return flow._raw(float(x), flow.orientation * float(t))


def flow_speed(flow: Flow, x: float) -> float:
    """Time derivative of the flow at t=0 (positive in the stored orientation)."""
    x = float(x)
    if _near_fixed_point(flow.fixed_points, x):
        raise AtFixedPoint(f"x={x} is at a fixed point; the flow speed vanishes there")
    if flow.kind == "translation":
        return 1.0
    if flow.kind == "scaling":
        return flow.orientation * x
    h = FD_STEP
    return (flow_eval(flow, x, h) - flow_eval(flow, x, -h)) / (2 * h)


def tau_inv(flow: Flow, t: float) -> float:
    return flow_eval(flow, flow.reference_x0, t)


def tau(flow: Flow, x: float) -> float:
    """Time for the flow to carry the reference point to ``x``, by bisection."""
    x = float(x)
    if not flow.in_basin(x):
        lo, hi = flow.basin
        raise OutOfBasin(f"x={x} is outside the basin ({lo}, {hi}) of x0={flow.reference_x0}")
    x0 = flow.reference_x0
    if x == x0:
        return 0.0

    # Bracket by doubling; tau is increasing in the stored orientation.
    step = 1.0
    if x > x0:
        t_lo, t_hi = 0.0, step
        while tau_inv(flow, t_hi) < x:
            t_lo, t_hi = t_hi, 2.0 * t_hi
            if t_hi > 2.0**60:
                raise NoConvergence(f"could not bracket tau({x})")
    else:
        t_lo, t_hi = -step, 0.0
        while tau_inv(flow, t_lo) > x:
            t_lo, t_hi = 2.0 * t_lo, t_lo
            if t_lo < -(2.0**60):
                raise NoConvergence(f"could not bracket tau({x})")

    for _ in range(MAX_BISECTION_STEPS):
        mid = 0.5 * (t_lo + t_hi)
        if mid in (t_lo, t_hi) or t_hi - t_lo <= TAU_RTOL * max(1.0, abs(mid)):
            return mid
        if tau_inv(flow, mid) < x:
            t_lo = mid
        else:
            t_hi = mid
    raise NoConvergence(f"bisection for tau({x}) did not converge in {MAX_BISECTION_STEPS} steps")


def conjugate_samples(samples: Sequence[float], flow: Flow, on_error: str = "raise") -> np.ndarray:
    """Map locations into flow time coordinates; infinity is left alone.

    Out-of-basin samples raise :class:`OutOfBasin` listing every offending
    index, or become NaN when ``on_error="nan"``.
    """
    samples = np.asarray(samples, dtype=float)
    out = np.empty_like(samples)
    bad = []
    if flow.kind == "translation":
        finite = np.isfinite(samples)
        out[finite] = flow.orientation * (samples[finite] - flow.reference_x0)
        out[~finite] = samples[~finite]
        return out
    for i, x in enumerate(samples):
        if math.isinf(x):
            out[i] = x
        elif flow.in_basin(x):
            out[i] = tau(flow, x)
        else:
            bad.append(i)
            out[i] = math.nan
    if bad and on_error == "raise":
        raise OutOfBasin(f"{len(bad)} samples outside the basin of x0", indices=bad)
    return out
