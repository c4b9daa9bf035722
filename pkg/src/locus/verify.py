"""Statistical checks of the structural properties of a location law.

Each check returns a :class:`Verdict`. A check is a table of rows; every row
compares an observed quantity with a bound or target and carries a standard
error. Row slack is measured in SE units so that a negative slack is a
failure:

* ``le``  (observed <= bound):  ``(bound - observed) / se + k``
* ``ge``  (observed >= bound):  ``(observed - bound) / se + k``
* ``eq``  (observed == target): ``k - |observed - target| / se``

A row with zero SE has slack +inf when it holds exactly and -inf otherwise.
The verdict reports the row with the smallest slack. It is Inconclusive when
no row fails but some row has an undefined SE (for instance no data).

Most checks work in tau-coordinates, where a stationary location becomes
translation-stationary. Grids are uniform, so the estimates are exact
path-wise identities wherever the grid allows it. Where an identity needs
stationarity, sets are shifted by whole multiples of epsilon so the
expectation is exact at finite epsilon as well.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Sequence

import numba
import numpy as np

from .binning import EDGE_TOL, bin_indices
from .core import (AtFixedPoint, Flow, Interval, conjugate_samples, flow_eval, flow_speed,
                   make_interval)
from .locfun import LocationFunctional, grid_span, parse_functional
from .mcengine import (EmpiricalDensity, ExperimentConfig, ReplicateError, _chunks, _run,
                       estimate_density, locate_many, path_batch, realize, run_replicates)
from .order import (EpsilonTooLarge, MalformedBox, WindowTooSmall, argmax_in_set,
                    argmax_reach_indices, scan_triples)
from .procgen import MarkedPoints, Path

DEFAULT_K = 3.0
STATUSES = ("pass", "fail", "inconclusive")


class BadNesting(ValueError):
    pass


class XOutsideMovingInterval(ValueError):
    pass


class LadderTooShort(ValueError):
    pass


# ---------------------------------------------------------------------------
# Verdicts

def row_slack(row: dict, k: float) -> float:
    """Slack of one detail row in SE units (negative means violated)."""
    kind = row["kind"]
    if kind == "info":
        return math.nan
    obs, bound, se = row["observed"], row["bound"], row["se"]
    if kind == "trend":
        # Passes if this step is within k SE of zero, or is not significantly
        # larger than the previous step.
        within = row_slack({**row, "kind": "eq"}, k)
        grow = row_slack({"kind": "le", "observed": abs(obs) - abs(row["previous"]), "bound": 0.0,
                          "se": math.hypot(se, row["previous_se"])}, k)
        return max(within, grow)
    if kind == "le":
        margin = bound - obs
    elif kind == "ge":
        margin = obs - bound
    elif kind == "eq":
        margin = -abs(obs - bound)
    else:
        raise ValueError(f"unknown row kind {kind!r}")
    if not (math.isfinite(se) and math.isfinite(margin)):
        return math.nan
    if se == 0:
        return math.inf if margin >= 0 else -math.inf
    return margin / se + k


def _row(label: str, observed: float, bound: float, se: float, kind: str, **extra) -> dict:
    return {"label": label, "observed": float(observed), "bound": float(bound),
            "se": float(se), "kind": kind, **extra}


@dataclass
class Verdict:
    check_name: str
    status: str
    observed: float
    bound_or_target: float
    slack_se: float
    details: list = field(default_factory=list)
    k: float = DEFAULT_K

    @classmethod
    def from_rows(cls, name: str, rows: list[dict], k: float = DEFAULT_K) -> "Verdict":
        for row in rows:
            row["slack_se"] = row_slack(row, k)
        tested = [r for r in rows if r["kind"] != "info"]
        if not tested:
            return cls(name, "inconclusive", math.nan, math.nan, math.nan, rows, k)
        slacks = [r["slack_se"] for r in tested]
        finite = [i for i, s in enumerate(slacks) if not math.isnan(s)]
        if finite:
            worst = tested[min(finite, key=lambda i: slacks[i])]
        else:
            worst = tested[0]
        if any(s < 0 for s in slacks if not math.isnan(s)):
            status = "fail"
        elif len(finite) < len(slacks):
            status = "inconclusive"
        else:
            status = "pass"
        return cls(name, status, worst["observed"], worst["bound"], worst["slack_se"], rows, k)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def recomputed_slack(self) -> float:
        """Slack recomputed from the details table alone."""
        slacks = [row_slack(r, self.k) for r in self.details if r["kind"] != "info"]
        finite = [s for s in slacks if not math.isnan(s)]
        return min(finite) if finite else math.nan

    def to_dict(self) -> dict:
        return _jsonable({"check_name": self.check_name, "status": self.status,
                          "observed": self.observed, "bound_or_target": self.bound_or_target,
                          "slack_se": self.slack_se, "k": self.k, "details": self.details})

    def write_details_csv(self, path) -> None:
        keys: list[str] = []
        for row in self.details:
            keys += [key for key in row if key not in keys]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            for row in self.details:
                w.writerow({key: _csv_value(row.get(key, "")) for key in keys})


def _csv_value(v):
    if isinstance(v, float):
        if math.isinf(v):
            return "INF" if v > 0 else "-INF"
        return repr(v)
    return v


def _jsonable(obj):
    """Replace non-finite floats by strings so the report is strict JSON."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_report(verdicts: Sequence[Verdict], path) -> None:
    with open(path, "w") as fh:
        json.dump([v.to_dict() for v in verdicts], fh, indent=2, allow_nan=False)
        fh.write("\n")


def within(x, lo: float, hi: float) -> np.ndarray:
    """Half-open membership ``lo <= x < hi`` with the binning edge tolerance,
    so grid points computed as ``t0 + i dt`` land on the intended side."""
    x = np.asarray(x, dtype=float)
    tol = EDGE_TOL * max(1.0, abs(lo), abs(hi))
    return (x >= lo - tol) & (x < hi - tol)


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = len(x)
    if n == 0:
        return math.nan, math.nan
    if n == 1:
        return float(x[0]), math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(n))


# ---------------------------------------------------------------------------
# Axioms

def _random_pairs(rng: np.random.Generator, lo: int, hi: int, pairs: int) -> np.ndarray:
    """``pairs`` rows of sorted indices (i0, j0, j1, i1) with j0 < j1."""
    out = np.empty((pairs, 4), dtype=np.int64)
    for p in range(pairs):
        while True:
            q = np.sort(rng.integers(lo, hi + 1, size=4))
            if q[1] < q[2]:
                break
        out[p] = q
    return out


def _axiom_chunk(cfg: ExperimentConfig, fn: LocationFunctional, pairs: int, ids) -> list:
    """Violations per replicate: list of (replicate, witness dict)."""
    found = []
    for rid in ids:
        try:
            r = realize(cfg, rid)
            rng = np.random.Generator(np.random.Philox(
                np.random.SeedSequence(cfg.master_seed, spawn_key=(rid, 1))))
            if isinstance(r, Path):
                grid = r.grid
                q = _random_pairs(rng, 0, grid.n - 1, pairs)
                ends = grid.t0 + q * grid.dt
            else:
                lo, hi = r.window
                ends = np.sort(rng.uniform(lo, hi, size=(pairs, 4)), axis=1)
            for e in ends:
                outer, inner = Interval(e[0], e[3]), Interval(e[1], e[2])
                l1, l2 = fn(r, outer), fn(r, inner)
                problem = None
                for loc, I in ((l1, outer), (l2, inner)):
                    if not math.isinf(loc) and not I.a - 1e-12 <= loc <= I.b + 1e-12:
                        problem = "location outside its interval"
                if problem is None and not math.isinf(l1) and inner.a <= l1 <= inner.b and l2 != l1:
                    problem = "stability under restriction"
                if problem is None and math.isinf(l1) and not math.isinf(l2):
                    problem = "consistency of existence"
                if problem:
                    found.append((rid, {"problem": problem, "I1": [outer.a, outer.b],
                                        "I2": [inner.a, inner.b], "L(I1)": l1, "L(I2)": l2}))
        except Exception as exc:
            raise ReplicateError(int(rid), exc) from exc
    return found


def check_axioms(cfg: ExperimentConfig, pairs: int = 10, replicates: int | None = None,
                 k: float = DEFAULT_K, workers: int | None = None) -> Verdict:
    """Random nested interval pairs per realization; any violation fails."""
    count = cfg.replicates if replicates is None else replicates
    fn = cfg.location_functional
    parts = _run(partial(_axiom_chunk, cfg, fn, pairs), _chunks(0, count), workers)
    found = [item for part in parts for item in part]
    rows = [_row("violations", len(found), 0, 0.0, "le", realizations=count, pairs=pairs,
                 functional=fn.name, sampler=cfg.sampler)]
    for rid, witness in found[:10]:
        rows.append({"label": "witness", "kind": "info", "observed": math.nan, "bound": math.nan,
                     "se": math.nan, "replicate": rid, **witness})
    return Verdict.from_rows("axioms", rows, k)


# ---------------------------------------------------------------------------
# Comparison of nested intervals

def check_comparison(cfg: ExperimentConfig, I1: Interval, I2: Interval, I: Interval,
                     paired: bool = False, k: float = DEFAULT_K,
                     workers: int | None = None) -> Verdict:
    """P(L(I1) in I) <= P(L(I2) in I) for I inside I2 inside I1.

    Unpaired mode uses independent replicates for the two intervals. Paired
    mode uses the same realizations and also counts path-wise exceptions:
    L(I1) in I while L(I2) differs from L(I1).
    """
    if not (I1.a <= I2.a <= I.a and I.b <= I2.b <= I1.b):
        raise BadNesting(f"need I <= I2 <= I1, got I1={tuple(I1)}, I2={tuple(I2)}, I={tuple(I)}")
    R = cfg.replicates
    if paired:
        locs = locate_many(cfg, [I1, I2], workers=workers)
        l1, l2 = locs[:, 0], locs[:, 1]
    else:
        l1 = locate_many(cfg, [I1], workers=workers)[:, 0]
        l2 = locate_many(cfg, [I2], first_replicate=R, workers=workers)[:, 0]
    in1 = ((l1 >= I.a) & (l1 <= I.b)).astype(float)
    in2 = ((l2 >= I.a) & (l2 <= I.b)).astype(float)
    p1, se1 = _mean_se(in1)
    p2, se2 = _mean_se(in2)
    rows = []
    if paired:
        diff, se = _mean_se(in1 - in2)
        exceptions = int(np.sum((in1 > 0) & (l2 != l1)))
        rows.append(_row("exceptions", exceptions, 0, 0.0, "le"))
        rows.append(_row("P(L(I1) in I) - P(L(I2) in I)", diff, 0.0, se, "le", p1=p1, p2=p2))
    else:
        se = math.hypot(se1, se2)
        rows.append(_row("P(L(I1) in I) - P(L(I2) in I)", p1 - p2, 0.0, se, "le", p1=p1, p2=p2))
    return Verdict.from_rows("comparison", rows, k)


# ---------------------------------------------------------------------------
# Density based checks

def check_density_bound(density: EmpiricalDensity, k: float = DEFAULT_K) -> Verdict:
    """Every bin density at most ``2 max{1/(x-a), 1/(b-x)}`` at the bin center."""
    a, b = density.a, density.b
    rows = []
    for x, f, se in zip(density.centers, density.bin_density, density.bin_se):
        bound = 2.0 * max(1.0 / (x - a), 1.0 / (b - x))
        rows.append(_row(f"x={x:.6g}", f, bound, se, "le", x=float(x)))
    return Verdict.from_rows("density_bound", rows, k)


def _bin_aligned(density: EmpiricalDensity, x: float, name: str) -> int:
    q = (x - density.a) / density.width
    i = int(round(q))
    if abs(q - i) > 1e-6:
        raise ValueError(f"{name}={x} is not a bin edge")
    return i


def _speeds(flow: Flow | None, xs: Sequence[float]) -> np.ndarray:
    if flow is None:
        return np.ones(len(xs))
    return np.array([flow_speed(flow, float(x)) for x in xs])


def total_variation(g: np.ndarray, se: np.ndarray):
    """Positive, negative and total variation of a step sequence with delta-method SEs."""
    d = np.diff(g)
    up, down = d > 0, d < 0
    tv_pos = float(d[up].sum())
    tv_neg = float(-d[down].sum())

    def se_of(weights):
        # d/dg_j of sum_i w_i (g_{i+1} - g_i) is w_{j-1} - w_j.
        w = np.concatenate([[0.0], weights.astype(float), [0.0]])
        grad = w[:-1] - w[1:]
        return float(np.sqrt(np.sum((grad * se) ** 2)))

    sign = np.sign(d)
    return (tv_pos, se_of(up)), (tv_neg, se_of(down)), (tv_pos + tv_neg, se_of(sign))


def check_tv_constraint(density: EmpiricalDensity, flow: Flow | None, u: float, v: float,
                        k: float = DEFAULT_K) -> Verdict:
    """Variation bounds for ``g = speed * f`` over the bins inside ``(u, v)``.

    ``f(v-)`` is the bin ending at ``v`` and ``f(v)`` the bin starting at it.
    Pass ``flow=None`` (or a translation flow) for the unweighted form.
    """
    if not density.a < u < v < density.b:
        raise ValueError(f"need a < u < v < b, got u={u}, v={v} on [{density.a}, {density.b}]")
    iu, iv = _bin_aligned(density, u, "u"), _bin_aligned(density, v, "v")
    f, fse, c = density.bin_density, density.bin_se, density.centers
    w = _speeds(flow, c[iu:iv])
    g, gse = w * f[iu:iv], w * fse[iu:iv]
    (tp, tp_se), (tn, tn_se), (tv, tv_se) = total_variation(g, gse)

    def end_bound(x, left, right):
        s = _speeds(flow, [x])[0]
        j = left if f[left] <= f[right] else right
        return s * f[j], s * fse[j]

    bv, bv_se = end_bound(v, iv - 1, iv)
    bu, bu_se = end_bound(u, iu - 1, iu)
    rows = [
        _row("TV+", tp, bv, math.hypot(tp_se, bv_se), "le", tv_se=tp_se),
        _row("TV-", tn, bu, math.hypot(tn_se, bu_se), "le", tv_se=tn_se),
        _row("TV", tv, bu + bv, math.hypot(tv_se, math.hypot(bu_se, bv_se)), "le", tv_se=tv_se),
    ]
    return Verdict.from_rows("tv", rows, k)


def check_boundary_explosion(density: EmpiricalDensity, side: str, tail_bins: int = 5,
                             k: float = DEFAULT_K) -> Verdict:
    """Densities rise toward the chosen boundary and the last bin is at least
    twice the median bin density."""
    side = side.lower()
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    if tail_bins < 3:
        raise ValueError("tail_bins must be at least 3")
    f, se = density.bin_density, density.bin_se
    order = np.arange(tail_bins)[::-1] if side == "left" else np.arange(len(f) - tail_bins, len(f))
    rows = []
    for i, j in zip(order[:-1], order[1:]):
        rows.append(_row(f"bin {i} -> bin {j}", f[j] - f[i], 0.0, math.hypot(se[i], se[j]), "ge"))
    median = float(np.median(f))
    edge = order[-1]
    rows.append(_row("boundary bin vs 2 x median", f[edge], 2 * median, se[edge], "ge",
                     median=median))
    return Verdict.from_rows(f"boundary_explosion_{side}", rows, k)


# ---------------------------------------------------------------------------
# Reach-triple boxes

@numba.njit(cache=True)
def _argmax_box_counts(values, times, boxes):
    """Argmax reach triples per row counted in each box ``(-inf,z1) x (lo,hi) x (z3,inf)``."""
    rows, n = values.shape
    out = np.zeros((rows, boxes.shape[0]))
    for k in range(rows):
        left, right = argmax_reach_indices(values[k])
        for i in range(n):
            v = values[k, i]
            member = (i + 1 < n and v >= values[k, i + 1]) or (i > 0 and v > values[k, i - 1])
            if not member:
                continue
            lv = times[left[i]] if left[i] >= 0 else -np.inf
            rv = times[right[i]] if right[i] < n else np.inf
            for j in range(boxes.shape[0]):
                if lv < boxes[j, 0] and times[i] > boxes[j, 1] and times[i] < boxes[j, 2] \
                        and rv > boxes[j, 3]:
                    out[k, j] += 1
    return out


def _box_chunk(cfg: ExperimentConfig, boxes: Sequence[tuple], ids) -> np.ndarray:
    """Per replicate, the number of reach triples in each box."""
    fn = cfg.location_functional
    out = np.zeros((len(ids), len(boxes)))
    try:
        if fn.kind == "argmax" and cfg.sampler != "marked_poisson":
            grid = cfg.grid
            return _argmax_box_counts(path_batch(cfg, ids), grid.times,
                                      np.asarray(boxes, dtype=float).reshape(-1, 4))
        lo_all = min(b[1] for b in boxes)
        hi_all = max(b[2] for b in boxes)
        for k, rid in enumerate(ids):
            triples = scan_triples(realize(cfg, rid), fn, (lo_all, hi_all))
            for j, (z1, lo, hi, z3) in enumerate(boxes):
                out[k, j] = sum(1 for t in triples if t.l < z1 and lo < t.x < hi and t.r > z3)
    except Exception as exc:
        raise ReplicateError(int(ids[0]), exc) from exc
    return out


def box_counts_many(cfg: ExperimentConfig, boxes: Sequence[tuple], first_replicate: int = 0,
                    replicates: int | None = None, workers: int | None = None) -> np.ndarray:
    lo, hi = cfg.window
    for box in boxes:
        z1, zlo, zhi, z3 = box
        if not zlo < zhi:
            raise MalformedBox(f"box needs z2_lo < z2_hi, got {box}")
        if z1 <= lo or z3 >= hi:
            raise WindowTooSmall(f"box {box} reaches the window edge {cfg.window}; "
                                 "censored reaches would bias the count")
    count = cfg.replicates if replicates is None else replicates
    if count == 0:
        return np.zeros((0, len(boxes)))
    parts = _run(partial(_box_chunk, cfg, list(boxes)), _chunks(first_replicate, count), workers)
    return np.concatenate(parts, axis=0)


def eta_relation_verdict(locations: np.ndarray, counts: np.ndarray, u: float, v: float,
                         k: float = DEFAULT_K) -> Verdict:
    """Compare the box mean count with the fraction of locations in ``(u, v)``."""
    locations = np.asarray(locations, dtype=float)
    hit = ((locations > u) & (locations < v)).astype(float)
    p, p_se = _mean_se(hit)
    eta, eta_se = _mean_se(np.asarray(counts, dtype=float))
    rows = [_row("eta box - P(L in (u,v))", eta - p, 0.0, math.hypot(eta_se, p_se), "eq",
                 eta=eta, eta_se=eta_se, prob=p, prob_se=p_se)]
    return Verdict.from_rows("eta_relation", rows, k)


def check_eta_relation(cfg: ExperimentConfig, u: float, v: float, k: float = DEFAULT_K,
                       workers: int | None = None) -> Verdict:
    """``P(L([a,b]) in (u,v))`` against the box ``(-inf,a) x (u,v) x (b,inf)``."""
    if not cfg.a < u < v < cfg.b:
        raise ValueError(f"need a < u < v < b, got u={u}, v={v}, [a,b]=[{cfg.a}, {cfg.b}]")
    snapped = cfg.snap(cfg.interval)
    locs = locate_many(cfg, [cfg.interval], workers=workers)[:, 0]
    counts = box_counts_many(cfg, [(snapped.a, u, v, snapped.b)], workers=workers)[:, 0]
    return eta_relation_verdict(locs, counts, u, v, k)


def check_eta_invariance(cfg: ExperimentConfig, box: tuple, c: float, k: float = DEFAULT_K,
                         workers: int | None = None) -> Verdict:
    """Box mass of the control measure against the same box shifted by ``c``."""
    z1, lo, hi, z3 = box
    shifted = (z1 + c, lo + c, hi + c, z3 + c)
    counts = box_counts_many(cfg, [tuple(box), shifted], workers=workers)
    e0, se0 = _mean_se(counts[:, 0])
    e1, se1 = _mean_se(counts[:, 1])
    diff, se = _mean_se(counts[:, 1] - counts[:, 0])
    rows = [_row("eta(A + c) - eta(A)", diff, 0.0, se, "eq", eta=e0, eta_se=se0,
                 eta_shifted=e1, eta_shifted_se=se1, c=c)]
    return Verdict.from_rows("eta_invariance", rows, k)


# ---------------------------------------------------------------------------
# Flux, conservation and the Noether potential

@dataclass
class _FluxRun:
    """Locations in tau-coordinates on the base interval and its shifts."""

    A: float
    B: float
    old: np.ndarray
    new: list
    eps: list
    new_a: list
    new_b: list

    def left_exit(self, j: int) -> np.ndarray:
        return (self.old >= self.A) & (self.old < self.new_a[j])

    def right_entry(self, j: int) -> np.ndarray:
        return (self.new[j] > self.B) & (self.new[j] <= self.new_b[j])


def _tau_points(flow: Flow, xs: Sequence[float]) -> np.ndarray:
    return conjugate_samples(np.asarray(xs, dtype=float), flow)


def _flux_run(cfg: ExperimentConfig, base: Interval, eps_list: Sequence[float], first_replicate: int = 0,
              workers: int | None = None) -> _FluxRun:
    flow = cfg.flow_obj
    width = float(np.diff(_tau_points(flow, [base.a, base.b]))[0])
    for eps in eps_list:
        if not 0 < eps < width / 4:
            raise EpsilonTooLarge(f"eps={eps} must lie in (0, {width / 4}) for this interval")
    shifted = [make_interval(flow_eval(flow, base.a, e), flow_eval(flow, base.b, e)) for e in eps_list]
    snapped = [cfg.snap(base)] + [cfg.snap(I) for I in shifted]
    locs = locate_many(cfg, [base] + shifted, first_replicate=first_replicate, workers=workers)
    tau_locs = [conjugate_samples(locs[:, j], flow) for j in range(locs.shape[1])]
    ends = _tau_points(flow, [x for I in snapped for x in (I.a, I.b)]).reshape(-1, 2)
    return _FluxRun(float(ends[0, 0]), float(ends[0, 1]), tau_locs[0], tau_locs[1:], list(eps_list),
                    [float(e) for e in ends[1:, 0]], [float(e) for e in ends[1:, 1]])


def shift_weights(z: np.ndarray, lo: float, hi: float, eps: float, m: int) -> np.ndarray:
    """``(1/m) #{s = 1..m : lo + s eps <= z < hi + s eps}`` (negated when ``hi < lo``)."""
    if hi < lo:
        return -shift_weights(z, hi, lo, eps, m)
    z = np.asarray(z, dtype=float)
    with np.errstate(invalid="ignore"):
        q1 = np.clip(np.floor((z - lo) / eps + 1e-9), 0, m)
        q2 = np.clip(np.floor((z - hi) / eps + 1e-9), 0, m)
    w = (q1 - q2) / m
    return np.where(np.isfinite(z), w, 0.0)


def _per_replicate_flux(run: _FluxRun, j: int, lo: float, hi: float, m: int) -> np.ndarray:
    """Per replicate ``(1/eps)[1_N w(T_old) - 1_M w(T_new)]`` for the weights on ``(lo, hi)``."""
    eps = run.eps[j]
    nu = np.where(run.right_entry(j), shift_weights(run.old, lo, hi, eps, m), 0.0)
    mu = np.where(run.left_exit(j), shift_weights(run.new[j], lo, hi, eps, m), 0.0)
    return (nu - mu) / eps


def _multiple(w: float, eps: float, what: str) -> int:
    m = int(round(w / eps))
    if m < 1 or abs(w / eps - m) > 1e-6 * max(m, 1):
        raise ValueError(f"{what} ({w:g}) must be a whole multiple of eps ({eps:g})")
    return m


def check_conservation(cfg: ExperimentConfig, eps_ladder: Sequence[float], bins: int | None = None,
                       k: float = DEFAULT_K, workers: int | None = None) -> Verdict:
    """Density differences of adjacent bins against the flux through them.

    Works in tau-coordinates on ``[A, B]`` with ``bins`` equal bins whose width
    must be a multiple of the smallest epsilon. For bins ``i, i+1`` (skipping
    the first bin, which touches the exit strip) the per-replicate statistic

        (1{T in bin i+1} - 1{T in bin i}) / w - (1/eps)[1_N w(T_old) - 1_M w(T_new)]

    has mean zero under stationarity, where ``w(.)`` averages the indicator of
    the bin pair shifted by ``s eps`` for ``s = 1..m``. Sub-checks compare the
    interior flux masses across the ladder and against the density next to
    each end of the interior.
    """
    eps_sorted = sorted(float(e) for e in eps_ladder)
    if not eps_sorted:
        raise ValueError("eps_ladder is empty")
    nb = bins or cfg.bins
    run = _flux_run(cfg, cfg.interval, eps_sorted, workers=workers)
    # Bins live on the nominal tau-interval; the exit/entry events use the
    # snapped ends. The two coincide for a translation on an aligned grid.
    A, B = (float(x) for x in _tau_points(cfg.flow_obj, [cfg.a, cfg.b]))
    T = run.old
    w = (B - A) / nb
    j0 = 0
    eps = eps_sorted[0]
    m = _multiple(w, eps, "bin width")
    e = A + w * np.arange(nb + 1)
    idx = bin_indices(T, A, B, nb)
    rows = []
    for i in range(1, nb - 1):
        dens = ((idx == i + 1).astype(float) - (idx == i).astype(float)) / w
        flux = _per_replicate_flux(run, j0, e[i], e[i + 1], m)
        d_mean, d_se = _mean_se(dens - flux)
        rows.append(_row(f"bins {i},{i + 1}", d_mean, 0.0, d_se, "eq", x1=float(0.5 * (e[i] + e[i + 1])),
                         x2=float(0.5 * (e[i + 1] + e[i + 2])), density_diff=float(dens.mean()),
                         flux_diff=float(flux.mean())))
    # Interior masses of mu and nu at each epsilon.
    u, v = e[1], e[nb - 1]
    contrib = {}
    for j, ej in enumerate(eps_sorted):
        mu = np.where(run.left_exit(j) & within(run.new[j], u, v), 1.0, 0.0) / ej
        nu = np.where(run.right_entry(j) & within(run.old, u, v), 1.0, 0.0) / ej
        contrib[j] = (mu, nu)
    for j in range(1, len(eps_sorted)):
        for name, col in (("mu", 0), ("nu", 1)):
            diff, se = _mean_se(contrib[j][col] - contrib[0][col])
            rows.append(_row(f"{name} mass eps={eps_sorted[j]:g} vs eps={eps:g}", diff, 0.0, se, "eq"))
    f_left = within(T, u - eps, u).astype(float) / eps
    f_right = within(T, v, v + eps).astype(float) / eps
    mu0, nu0 = contrib[0]
    diff, se = _mean_se(mu0 - f_left)
    rows.append(_row("mu mass - f(u-)", diff, 0.0, se, "le", mass=float(mu0.mean()), u=float(u)))
    diff, se = _mean_se(nu0 - f_right)
    rows.append(_row("nu mass - f(v)", diff, 0.0, se, "le", mass=float(nu0.mean()), v=float(v)))
    return Verdict.from_rows("conservation", rows, k)


def flux_convergence_verdict(masses: dict, k: float = DEFAULT_K) -> Verdict:
    """``masses[name]`` lists per-replicate contributions, one array per epsilon
    from largest to smallest. Each successive difference after the first must
    be within k SE of zero or not significantly larger than the one before."""
    rows = []
    for name, series in masses.items():
        prev = None
        for j in range(1, len(series)):
            d, se = _mean_se(series[j] - series[j - 1])
            extra = dict(mass_before=float(np.mean(series[j - 1])), mass_after=float(np.mean(series[j])))
            if prev is None:
                rows.append({"label": f"{name} step {j - 1}", "kind": "info", "observed": d,
                             "bound": 0.0, "se": se, **extra})
            else:
                rows.append(_row(f"{name} step {j - 1}", d, 0.0, se, "trend", previous=prev[0],
                                 previous_se=prev[1], **extra))
            prev = (d, se)
    return Verdict.from_rows("flux_convergence", rows, k)


def check_flux_convergence(cfg: ExperimentConfig, eps_ladder: Sequence[float],
                           region: tuple[float, float] | None = None, k: float = DEFAULT_K,
                           workers: int | None = None) -> Verdict:
    """Scaled interior masses of the flux measures across a decreasing ladder.

    Masses are taken on ``region`` (tau-coordinates, default the middle half of
    the interval): near the ends the total masses grow without bound for
    processes whose density explodes at the boundary.
    """
    ladder = [float(e) for e in eps_ladder]
    if len(ladder) < 3 or any(x <= y for x, y in zip(ladder, ladder[1:])):
        raise LadderTooShort("need at least three strictly decreasing epsilons")
    run = _flux_run(cfg, cfg.interval, ladder, workers=workers)
    if region is None:
        q = (run.B - run.A) / 4
        region = (run.A + q, run.B - q)
    u, v = region
    mu, nu = [], []
    for j, eps in enumerate(ladder):
        mu.append(np.where(run.left_exit(j) & within(run.new[j], u, v), 1.0, 0.0) / eps)
        nu.append(np.where(run.right_entry(j) & within(run.old, u, v), 1.0, 0.0) / eps)
    return flux_convergence_verdict({"mu": mu, "nu": nu}, k)


@dataclass
class NoetherPotential:
    """``K(y) = nu((x0, y]) - mu((x0, y])`` (negated for ``y < x0``) on a grid
    of tau-coordinates, with ``K(x0) = 0``."""

    x0: float
    y: np.ndarray
    K: np.ndarray
    K_se: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y", "K", "se"])
            for row in zip(self.y, self.K, self.K_se):
                w.writerow([repr(float(x)) for x in row])


def build_noether_potential(run: _FluxRun, x0: float, ys: Sequence[float], h: float) -> NoetherPotential:
    eps = run.eps[0]
    m = _multiple(h, eps, "window width")
    K, se = [], []
    for y in ys:
        if y == x0:
            K.append(0.0)
            se.append(0.0)
            continue
        mean, s = _mean_se(_per_replicate_flux(run, 0, x0 - h / 2, y - h / 2, m))
        K.append(mean)
        se.append(s)
    return NoetherPotential(x0, np.asarray(ys, float), np.asarray(K), np.asarray(se))


def check_noether_invariant(cfg: ExperimentConfig, t_grid: Sequence[float], x: float,
                            eps: float = 0.01, window: float = 0.05, x_ref: float | None = None,
                            k: float = DEFAULT_K, workers: int | None = None,
                            potential_out: list | None = None) -> Verdict:
    """``speed(x) f_t(x) - K(x - t)`` (tau-coordinates) is the same for every t.

    ``f_t`` is estimated from fresh replicates per t with a window of width
    ``window`` around ``tau(x)``. ``K`` is built from the flux at t=0 (its own
    replicate block) with the same window, so every term is exact at finite
    ``eps`` in expectation.
    """
    flow = cfg.flow_obj
    base = cfg.interval
    moving = [make_interval(flow_eval(flow, base.a, t), flow_eval(flow, base.b, t)) for t in t_grid]
    for t, I in zip(t_grid, moving):
        if not I.a < x < I.b:
            raise XOutsideMovingInterval(f"x={x} is outside the moved interval [{I.a}, {I.b}] at t={t}")
    R = cfg.replicates
    run = _flux_run(cfg, base, [eps], first_replicate=0, workers=workers)
    z = float(_tau_points(flow, [x])[0])
    z_ref = float(_tau_points(flow, [x_ref if x_ref is not None else 0.5 * (base.a + base.b)])[0])
    h = window
    m = _multiple(h, eps, "window width")
    lo_ok, hi_ok = run.A + eps + h / 2, run.B - h / 2
    ys = [z - t for t in t_grid]
    for y in ys + [z_ref]:
        if not lo_ok - 1e-12 <= y <= hi_ok + 1e-12:
            raise XOutsideMovingInterval(f"tau-point {y} is too close to the interval ends for window {h}")
    rows, stats = [], []
    for n, (t, y) in enumerate(zip(t_grid, ys)):
        locs = locate_many(cfg, [moving[n]], first_replicate=R * (n + 1), workers=workers)[:, 0]
        T = conjugate_samples(locs, flow)
        win = within(T, z - h / 2, z + h / 2).astype(float) / h
        kflux = _per_replicate_flux(run, 0, z_ref - h / 2, y - h / 2, m)
        try:
            speed = flow_speed(flow, x)
        except AtFixedPoint:
            speed = math.nan
        # In tau-coordinates the weighted density is the plain density.
        f_t, f_se = _mean_se(win)
        k_val, k_se = (0.0, 0.0) if y == z_ref else _mean_se(kflux)
        stats.append((f_t - k_val, f_se, kflux if y != z_ref else np.zeros_like(kflux)))
        rows.append({"label": f"t={t:g}", "kind": "info", "observed": f_t - k_val, "bound": math.nan,
                     "se": math.hypot(f_se, k_se), "t": float(t), "f_t": f_t, "f_t_se": f_se,
                     "K": k_val, "K_se": k_se, "speed": speed})
    vals = [s[0] for s in stats]
    hi_i, lo_i = int(np.argmax(vals)), int(np.argmin(vals))
    k_diff_se = _mean_se(stats[hi_i][2] - stats[lo_i][2])[1] if hi_i != lo_i else 0.0
    spread_se = 0.0 if hi_i == lo_i else math.sqrt(stats[hi_i][1] ** 2 + stats[lo_i][1] ** 2 + k_diff_se ** 2)
    rows.insert(0, _row("invariant spread", vals[hi_i] - vals[lo_i], 0.0, spread_se, "eq"))
    if potential_out is not None:
        grid_y = np.linspace(lo_ok, hi_ok, 41)
        potential_out.append(build_noether_potential(run, z_ref, sorted(set(grid_y) | {z_ref}), h))
    return Verdict.from_rows("noether", rows, k)


# ---------------------------------------------------------------------------
# Boundary atom

def _atom_chunk(cfg: ExperimentConfig, T_steps: int, unit: tuple[int, int], ids) -> np.ndarray:
    """Per replicate: (L = a, a in S_T, dt * #{x in unit : x in S_T})."""
    fn = cfg.location_functional
    grid = cfg.grid
    i0, i1 = grid_span(grid, cfg.interval)
    u0, u1 = unit
    out = np.zeros((len(ids), 3))
    try:
        if fn.kind == "argmax":
            values = path_batch(cfg, ids)
            for k, row in enumerate(values):
                _, right = argmax_reach_indices(np.ascontiguousarray(row))
                out[k, 0] = float(np.argmax(row[i0:i1 + 1]) == 0)
                out[k, 1] = float(right[i0] > i0 + T_steps)
                pts = np.arange(u0, u1)
                out[k, 2] = grid.dt * np.count_nonzero(right[pts] > pts + T_steps)
            return out
        for k, rid in enumerate(ids):
            r = realize(cfg, rid)
            a = grid.time(i0)
            out[k, 0] = float(fn(r, cfg.interval) == a)
            triples = {t.x: t for t in scan_triples(r, fn, (grid.time(u0), grid.time(i0 + T_steps + (u1 - u0))))}

            def in_s(i):
                t = triples.get(grid.time(i))
                return t is not None and t.r > grid.time(i + T_steps) + 1e-12

            out[k, 1] = float(in_s(i0))
            out[k, 2] = grid.dt * sum(in_s(i) for i in range(u0, u1))
    except Exception as exc:
        raise ReplicateError(int(ids[0]), exc) from exc
    return out


def boundary_atom_samples(cfg: ExperimentConfig, workers: int | None = None) -> np.ndarray:
    """Per-replicate columns: atom indicator, ``a in S_T`` indicator, Lebesgue estimate."""
    if cfg.sampler == "marked_poisson":
        raise ValueError("the boundary atom scan needs path realizations")
    T = cfg.b - cfg.a
    if cfg.margin * (cfg.b - cfg.a) < T:
        raise WindowTooSmall(f"margins of {cfg.margin * T} are smaller than T={T}")
    grid = cfg.grid
    i0, i1 = grid_span(grid, cfg.interval)
    T_steps = i1 - i0
    unit = (i0, grid.index_of(grid.time(i0) + 1.0))
    if unit[1] + T_steps > grid.n - 1:
        raise WindowTooSmall("the window does not reach T past the unit interval")
    if cfg.replicates == 0:
        return np.zeros((0, 3))
    parts = _run(partial(_atom_chunk, cfg, T_steps, unit), _chunks(0, cfg.replicates), workers)
    return np.concatenate(parts, axis=0)


def check_boundary_atom(cfg: ExperimentConfig, k: float = DEFAULT_K, workers: int | None = None) -> Verdict:
    """Three estimates of the atom at ``a``: the location sample, the
    indicator ``a in S_T`` and the Lebesgue measure of ``S_T`` in a unit
    interval, with ``T = b - a``. On the grid, ``x`` is in ``S_T`` when its
    right reach is beyond ``x + T``."""
    cols = boundary_atom_samples(cfg, workers=workers)
    names = ["atom_a", "indicator a in S_T", "Leb(S_T in unit)"]
    rows = []
    for i in range(3):
        mean, se = _mean_se(cols[:, i])
        rows.append({"label": names[i], "kind": "info", "observed": mean, "bound": math.nan, "se": se})
    for i, j in ((0, 1), (0, 2), (1, 2)):
        diff, se = _mean_se(cols[:, i] - cols[:, j])
        rows.append(_row(f"{names[i]} - {names[j]}", diff, 0.0, se, "eq"))
    return Verdict.from_rows("boundary_atom", rows, k)


# ---------------------------------------------------------------------------
# Suite

CHECK_NAMES = ("axioms", "comparison", "density_bound", "eta_relation", "eta_invariance",
               "conservation", "tv", "noether", "boundary_atom", "boundary_explosion",
               "flux_convergence")
ARGMAX_ONLY = ("eta_relation", "eta_invariance", "boundary_atom")


def applicable_checks(cfg: ExperimentConfig) -> list[str]:
    fn = parse_functional(cfg.functional)
    names = []
    for name in CHECK_NAMES:
        if name in ARGMAX_ONLY and (fn.kind != "argmax" or cfg.sampler == "marked_poisson"):
            continue
        names.append(name)
    return names


@dataclass
class SuiteResult:
    verdicts: list
    density: EmpiricalDensity | None = None
    samples: np.ndarray | None = None
    potentials: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)


def run_checks(cfg: ExperimentConfig, names: Sequence[str], workers: int | None = None) -> SuiteResult:
    """Run the named checks with parameters from ``cfg.checks``.

    ``cfg.checks`` may hold a top-level ``k`` and one object per check name
    with that check's parameters.
    """
    unknown = [n for n in names if n not in CHECK_NAMES]
    if unknown:
        raise KeyError(unknown[0])
    params: dict[str, Any] = cfg.checks
    k = float(params.get("k", DEFAULT_K))
    p = lambda name: dict(params.get(name, {}))  # noqa: E731
    result = SuiteResult([])
    needs_density = {"density_bound", "tv", "boundary_explosion"} & set(names)
    if needs_density:
        snapped = cfg.snap(cfg.interval)
        result.samples = run_replicates(cfg, workers=workers)
        result.density = estimate_density(result.samples, snapped.a, snapped.b, cfg.bins)
    mid = 0.5 * (cfg.a + cfg.b)
    span = cfg.b - cfg.a
    for name in names:
        q = p(name)
        if name == "axioms":
            v = check_axioms(cfg, pairs=int(q.get("pairs", 10)), replicates=q.get("replicates"),
                             k=k, workers=workers)
        elif name == "comparison":
            I1 = make_interval(*q.get("I1", [cfg.a, cfg.b]))
            I2 = make_interval(*q.get("I2", [cfg.a, cfg.b]))
            I = make_interval(*q.get("I", [mid - span / 10, mid + span / 10]))
            v = check_comparison(cfg, I1, I2, I, paired=bool(q.get("paired", False)), k=k, workers=workers)
        elif name == "density_bound":
            v = check_density_bound(result.density, k=k)
        elif name == "eta_relation":
            v = check_eta_relation(cfg, q.get("u", cfg.a + 0.3 * span), q.get("v", cfg.a + 0.7 * span),
                                   k=k, workers=workers)
        elif name == "eta_invariance":
            box = tuple(q.get("box", [cfg.a, cfg.a + 0.25 * span, cfg.a + 0.75 * span, cfg.b]))
            v = check_eta_invariance(cfg, box, float(q.get("c", 0.125 * span)), k=k, workers=workers)
        elif name == "conservation":
            v = check_conservation(cfg, q.get("eps_ladder", [span / 80]), bins=q.get("bins"),
                                   k=k, workers=workers)
        elif name == "tv":
            bins = int(q.get("bins", cfg.bins))
            dens = result.density if bins == cfg.bins else estimate_density(
                result.samples, result.density.a, result.density.b, bins)
            v = check_tv_constraint(dens, cfg.flow_obj, q.get("u", cfg.a + 0.2 * span),
                                    q.get("v", cfg.a + 0.8 * span), k=k)
        elif name == "noether":
            pots: list = []
            v = check_noether_invariant(cfg, q.get("t_grid", [0.0]), q.get("x", mid),
                                        eps=q.get("eps", 0.01), window=q.get("window", 0.05),
                                        x_ref=q.get("x_ref"), k=k, workers=workers, potential_out=pots)
            result.potentials += pots
        elif name == "boundary_atom":
            v = check_boundary_atom(cfg, k=k, workers=workers)
        elif name == "boundary_explosion":
            tail = int(q.get("tail_bins", 5))
            for side in q.get("sides", ["left", "right"]):
                result.verdicts.append(check_boundary_explosion(result.density, side, tail, k=k))
            continue
        else:  # flux_convergence
            v = check_flux_convergence(cfg, q.get("eps_ladder", [0.1 * span, 0.05 * span, 0.025 * span]),
                                       region=q.get("region"), k=k, workers=workers)
        result.verdicts.append(v)
    return result
