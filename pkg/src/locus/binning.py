"""Half-open binning of grid-valued locations.

Locations sit on grid points and bin edges usually do too, so a plain float
comparison can put an edge point on either side. Indices are computed as
``floor((x - a) / width + EDGE_TOL)``: a point on an edge always opens the
bin to its right.
"""

from __future__ import annotations

import numpy as np

EDGE_TOL = 1e-9


def bin_indices(x, a: float, b: float, bins: int) -> np.ndarray:
    """Bin index of each sample on ``(a, b)``, or -1 when outside or exactly at an endpoint."""
    x = np.asarray(x, dtype=float)
    width = (b - a) / bins
    with np.errstate(invalid="ignore"):
        idx = np.floor((x - a) / width + EDGE_TOL)
    inside = np.isfinite(x) & (x > a) & (x < b) & (idx >= 0) & (idx < bins)
    return np.where(inside, idx, -1).astype(np.int64)


def bin_counts(x, a: float, b: float, bins: int) -> np.ndarray:
    idx = bin_indices(x, a, b, bins)
    return np.bincount(idx[idx >= 0], minlength=bins)


def edges(a: float, b: float, bins: int) -> np.ndarray:
    return a + (b - a) * np.arange(bins + 1) / bins


def binomial_se(p, n: int):
    if n <= 0:
        return np.zeros_like(np.asarray(p, dtype=float))
    p = np.asarray(p, dtype=float)
    return np.sqrt(np.clip(p * (1 - p), 0, None) / n)
