"""Band-limited dynamic time warping between aligned time series.

The distance accumulates *squared* L1 local costs along monotone warping
paths restricted to a diagonal band |i - j| <= B, and takes a square root at
the end. The DP for the distance keeps only two band-width rows, so both time
and memory are O(n * B) instead of O(n * m).

Kernels are numba-compiled and release the GIL, so all-pairs computation can
fan out over threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import InfeasibleBandError

WORKERS_ENV = "STFUSION_WORKERS"


@dataclass(frozen=True)
class BandSpec:
    """Diagonal search-band constraint |i - j| <= band_width.

    With ``unbounded=True`` the band covers the whole alignment plane for any
    pair of lengths (classical DTW).
    """

    band_width: int = 0
    unbounded: bool = False

    def __post_init__(self):
        if not self.unbounded and self.band_width < 0:
            raise ValueError("band_width must be nonnegative")

    def effective(self, n: int, m: int) -> int:
        """Band radius actually used for a pair of lengths (n, m)."""
        if self.unbounded:
            return max(n, m)
        return self.band_width


UNBOUNDED = BandSpec(unbounded=True)


def _coerce_band(band) -> BandSpec:
    if band is None:
        return UNBOUNDED
    if isinstance(band, BandSpec):
        return band
    return BandSpec(int(band))


def _coerce_series(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("series must be a nonempty 1-D or (n, d) array")
    if not np.all(np.isfinite(arr)):
        raise ValueError("series values must be finite")
    return np.ascontiguousarray(arr)


def local_cost(x, y) -> float:
    """L1 distance between two d-dimensional points."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape:
        raise ValueError(f"point dimensions differ: {x.shape} vs {y.shape}")
    return float(np.abs(x - y).sum())


@njit(cache=True, nogil=True)
def _banded_distance(x, y, band):
    """Rolling two-row banded DP; returns (squared accumulated cost, cells evaluated)."""
    n, m = x.shape[0], y.shape[0]
    d = x.shape[1]
    width = 2 * band + 1
    inf = np.inf
    prev = np.full(width, inf)
    cur = np.full(width, inf)
    cells = 0
    for i in range(n):
        lo = i - band
        if lo < 0:
            lo = 0
        hi = i + band
        if hi > m - 1:
            hi = m - 1
        for o in range(width):
            cur[o] = inf
        for j in range(lo, hi + 1):
            o = j - (i - band)
            c = 0.0
            for k in range(d):
                c += abs(x[i, k] - y[j, k])
            c = c * c
            if i == 0 and j == 0:
                best = 0.0
            else:
                best = prev[o]  # diagonal (i-1, j-1)
                if o + 1 < width and prev[o + 1] < best:
                    best = prev[o + 1]  # above (i-1, j)
                if o - 1 >= 0 and cur[o - 1] < best:
                    best = cur[o - 1]  # left (i, j-1)
            cur[o] = c + best
            cells += 1
        prev, cur = cur, prev
    end = (m - 1) - (n - 1) + band
    return prev[end], cells


@njit(cache=True, nogil=True)
def _banded_choices(x, y, band):
    """Banded DP keeping per-cell predecessor choices for backtracking.

    Choice codes: 0 start, 1 diagonal, 2 above, 3 left. Ties prefer the
    diagonal, then the above predecessor.
    """
    n, m = x.shape[0], y.shape[0]
    d = x.shape[1]
    width = 2 * band + 1
    inf = np.inf
    prev = np.full(width, inf)
    cur = np.full(width, inf)
    choices = np.zeros((n, width), dtype=np.int8)
    for i in range(n):
        lo = i - band
        if lo < 0:
            lo = 0
        hi = i + band
        if hi > m - 1:
            hi = m - 1
        for o in range(width):
            cur[o] = inf
        for j in range(lo, hi + 1):
            o = j - (i - band)
            c = 0.0
            for k in range(d):
                c += abs(x[i, k] - y[j, k])
            c = c * c
            if i == 0 and j == 0:
                cur[o] = c
                choices[i, o] = 0
                continue
            best = prev[o]
            pick = 1
            if o + 1 < width and prev[o + 1] < best:
                best = prev[o + 1]
                pick = 2
            if o - 1 >= 0 and cur[o - 1] < best:
                best = cur[o - 1]
                pick = 3
            cur[o] = c + best
            choices[i, o] = pick
        prev, cur = cur, prev
    end = (m - 1) - (n - 1) + band
    return prev[end], choices


def _check_pair(x: np.ndarray, y: np.ndarray, spec: BandSpec) -> int:
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"feature dimensions differ: {x.shape[1]} vs {y.shape[1]}")
    band = spec.effective(x.shape[0], y.shape[0])
    if abs(x.shape[0] - y.shape[0]) > band:
        raise InfeasibleBandError(
            f"band width {band} excludes endpoint for lengths "
            f"{x.shape[0]} and {y.shape[0]}"
        )
    return band


def dtw_distance(x, y, band=None, with_cell_count=False):
    """Banded DTW distance; sqrt of the minimal accumulated squared L1 cost.

    `band` may be a BandSpec, an int radius, or None for the unbounded case.
    With ``with_cell_count=True`` also returns the number of DP cells
    evaluated (bounded by n * (2B + 2)).
    """
    x, y = _coerce_series(x), _coerce_series(y)
    b = _check_pair(x, y, _coerce_band(band))
    sq, cells = _banded_distance(x, y, b)
    dist = float(np.sqrt(sq))
    if with_cell_count:
        return dist, int(cells)
    return dist


def dtw_path(x, y, band=None) -> np.ndarray:
    """A minimal-cost warping path as an int array of (i, j) pairs.

    Starts at (0, 0), ends at (n-1, m-1); backtracking ties prefer the
    diagonal predecessor, then (i-1, j).
    """
    x, y = _coerce_series(x), _coerce_series(y)
    b = _check_pair(x, y, _coerce_band(band))
    _, choices = _banded_choices(x, y, b)
    i, j = x.shape[0] - 1, y.shape[0] - 1
    steps = [(i, j)]
    while i != 0 or j != 0:
        pick = choices[i, j - (i - b)]
        if pick == 1:
            i, j = i - 1, j - 1
        elif pick == 2:
            i = i - 1
        else:
            j = j - 1
        steps.append((i, j))
    return np.array(steps[::-1], dtype=np.int64)


def _worker_count(workers=None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def pairwise_distances(series, band=None, workers=None) -> np.ndarray:
    """All-pairs banded DTW distance matrix for N equal-length series.

    `series` is an (N, n) or (N, n, d) array. Only the upper triangle is
    computed (the banded recurrence is symmetric at equal lengths) and then
    mirrored; the diagonal is zero. Rows are distributed over threads (the
    kernels release the GIL); results are written disjointly so the matrix is
    identical for any worker count.
    """
    try:
        arr = np.asarray(series, dtype=np.float64)
    except ValueError as exc:
        raise ValueError("all series must have the same length") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError("expected an (N, n) or (N, n, d) array of series")
    if not np.all(np.isfinite(arr)):
        raise ValueError("series values must be finite")
    n_series = arr.shape[0]
    spec = _coerce_band(band)
    b = spec.effective(arr.shape[1], arr.shape[1])
    rows = [np.ascontiguousarray(arr[i]) for i in range(n_series)]
    out = np.zeros((n_series, n_series), dtype=np.float64)

    def fill_row(i):
        xi = rows[i]
        for j in range(i + 1, n_series):
            sq, _ = _banded_distance(xi, rows[j], b)
            out[i, j] = np.sqrt(sq)

    n_workers = min(_worker_count(workers), max(1, n_series - 1))
    if n_workers == 1 or n_series < 8:
        for i in range(n_series - 1):
            fill_row(i)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(fill_row, range(n_series - 1)))
    out += out.T
    return out
