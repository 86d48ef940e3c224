"""Confidence intervals, Lipschitz safe-set expansion and frontier detection.

All per-cell quantities are ``(height, width)`` arrays over a :class:`Grid`.
Cell sets are boolean masks of the same shape.

Expansion and potential are evaluated exactly: a source cell can only reach
cells within ``(bound - h) / L`` of itself, so either each source scans its
own reach window, or (when reaches are short and sources many) the reach
disk is swept as a list of integer offsets applied to all sources at once.
Both paths test the same inequality on the same distances.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import distance_transform_edt

from .errors import InvalidArgument
from .grid import Grid, write_grid, write_mask

log = logging.getLogger(__name__)

BIG = np.finfo(float).max
"""Stand-in for +infinity in interval bounds (and -BIG for -infinity)."""

# relative slack when turning a reach radius into a cell window; the exact
# inequality is re-tested for every pair, so this only has to be generous
_REACH_SLACK = 1e-9
# per-source bookkeeping cost, in element-operation units
_SOURCE_OVERHEAD = 400


@dataclass
class ConfidenceField:
    lower: np.ndarray
    upper: np.ndarray
    inconsistent: int = 0
    conflict: Optional[np.ndarray] = None  # cells whose last update was inconsistent

    @property
    def width(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return self.upper - self.lower

    def copy(self):
        return ConfidenceField(self.lower.copy(), self.upper.copy(), self.inconsistent,
                               None if self.conflict is None else self.conflict.copy())


@dataclass
class RegionState:
    safe: np.ndarray
    frontier: np.ndarray
    potential: np.ndarray


def init_confidence(grid: Grid, s0, h: float) -> ConfidenceField:
    """``[h, inf)`` on the initial safe cells, the whole line elsewhere."""
    s0 = np.asarray(s0, dtype=bool)
    if s0.shape != grid.shape:
        raise InvalidArgument(f"initial safe mask has shape {s0.shape}, grid is {grid.shape}")
    if not s0.any():
        raise InvalidArgument("initial safe set is empty")
    lower = np.full(grid.shape, -BIG)
    upper = np.full(grid.shape, BIG)
    lower[s0] = h
    return ConfidenceField(lower, upper)


def update_confidence(prev: ConfidenceField, means, stds, beta: float) -> ConfidenceField:
    """Intersect the previous intervals with ``mean +- sqrt(beta) * std``.

    Cells where the intersection would be empty keep their previous interval;
    the number of such cells is reported in ``inconsistent``.
    """
    if beta < 0:
        raise InvalidArgument("beta must be >= 0")
    shape = prev.lower.shape
    mu = np.asarray(means, dtype=float).reshape(shape)
    sd = np.asarray(stds, dtype=float).reshape(shape)
    half = np.sqrt(beta) * sd
    lo = np.maximum(prev.lower, mu - half)
    hi = np.minimum(prev.upper, mu + half)
    bad = lo > hi
    n_bad = int(bad.sum())
    if n_bad:
        log.info("confidence intersection empty at %d cells; keeping previous intervals", n_bad)
        lo[bad] = prev.lower[bad]
        hi[bad] = prev.upper[bad]
    return ConfidenceField(lo, hi, n_bad, bad)


def _offsets_within(grid: Grid, radius: float):
    """Integer offsets (di, dj) whose distance is at most ``radius`` (world units)."""
    rx = grid.width - 1
    ry = grid.height - 1
    if np.isfinite(radius):
        r_cells = int(np.floor(radius / grid.resolution)) + 1
        rx = min(rx, r_cells)
        ry = min(ry, r_cells)
    di, dj = np.meshgrid(np.arange(-rx, rx + 1), np.arange(-ry, ry + 1))
    di = di.ravel()
    dj = dj.ravel()
    d = grid.offset_distance(di, dj)
    keep = d <= radius * (1 + _REACH_SLACK) + 1e-300
    order = np.argsort(d[keep], kind="stable")
    return di[keep][order], dj[keep][order], d[keep][order]


def _slices(n, k):
    """Source and target slices along one axis for a shift of ``k`` cells."""
    if k >= 0:
        return slice(0, n - k), slice(k, n)
    return slice(-k, n), slice(0, n + k)


def _reach(bound, L, h):
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if L == 0:
            return np.where(bound >= h, np.inf, -1.0)
        return (bound - h) / L


def _window_cost(grid, radius):
    r = np.minimum(np.floor(radius / grid.resolution) + 1, max(grid.width, grid.height))
    span_x = np.minimum(2 * r + 1, grid.width)
    span_y = np.minimum(2 * r + 1, grid.height)
    return float(np.sum(span_x * span_y)) + _SOURCE_OVERHEAD * len(radius)


class _DistanceTable:
    """Offset distances for the largest possible window, sliced per source."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.ry = grid.height - 1
        self.rx = grid.width - 1
        dj, di = np.meshgrid(np.arange(-self.ry, self.ry + 1), np.arange(-self.rx, self.rx + 1),
                             indexing="ij")
        self.d = grid.offset_distance(di, dj)

    def window(self, iy, ix, radius):
        g = self.grid
        if np.isfinite(radius):
            r = min(int(np.floor(radius / g.resolution)) + 1, max(g.width, g.height))
        else:
            r = max(g.width, g.height)
        y0, y1 = max(iy - r, 0), min(iy + r + 1, g.height)
        x0, x1 = max(ix - r, 0), min(ix + r + 1, g.width)
        d = self.d[y0 - iy + self.ry:y1 - iy + self.ry, x0 - ix + self.rx:x1 - ix + self.rx]
        return (slice(y0, y1), slice(x0, x1)), d


_TABLES = {}


def _table(grid):
    t = _TABLES.get(grid)
    if t is None:
        if len(_TABLES) > 8:
            _TABLES.clear()
        t = _TABLES[grid] = _DistanceTable(grid)
    return t


def _admits(bound, L, d, h):
    # the literal test: bound - L * ||x - x'|| >= h
    return bound - L * d >= h


def _clearance(blocked, grid):
    """World distance from every cell to the nearest cell where ``blocked`` is False."""
    if blocked.all():
        return np.full(grid.shape, np.inf)
    return distance_transform_edt(blocked) * grid.resolution


def _sweep(src, bound, L, h, grid, radius, apply_offset, apply_source):
    """Dispatch to the cheaper of the offset sweep and the per-source scan."""
    rmax = float(radius.max())
    di, dj, dist = _offsets_within(grid, rmax)
    if len(di) * grid.size <= _window_cost(grid, radius):
        for a, b, d in zip(di, dj, dist):
            ok = src & _admits(bound, L, d, h)
            sy, ty = _slices(grid.height, b)
            sx, tx = _slices(grid.width, a)
            apply_offset(ok, sy, sx, ty, tx)
    else:
        table = _table(grid)
        ys, xs = np.nonzero(src)
        for iy, ix, r in zip(ys, xs, radius):
            win, d = table.window(iy, ix, r)
            apply_source(iy, ix, win, _admits(bound[iy, ix], L, d, h))


def expand_safe(prev_safe, conf: ConfidenceField, L: float, h: float, grid: Grid) -> np.ndarray:
    """Union over previously safe cells of the cells their lower bound certifies.

    Returns the literal union; an empty result is returned as-is (callers
    decide whether to fall back to ``prev_safe``).
    """
    if L < 0:
        raise InvalidArgument("Lipschitz constant must be >= 0")
    prev_safe = np.asarray(prev_safe, dtype=bool)
    lower = conf.lower
    src = prev_safe & (lower >= h)
    out = src.copy()  # every source certifies itself at distance zero
    if not src.any():
        return out
    if L == 0:
        out[:] = True
        return out
    radius = np.full(grid.shape, -1.0)
    radius[src] = _reach(lower[src], L, h)
    # a source whose reach stops short of the nearest non-source cell adds nothing
    active = src & (radius >= _clearance(src, grid) * (1 - _REACH_SLACK))
    if not active.any():
        return out

    def on_offset(ok, sy, sx, ty, tx):
        out[ty, tx] |= ok[sy, sx]

    def on_source(iy, ix, win, hit):
        out[win] |= hit

    _sweep(active, lower, L, h, grid, radius[active], on_offset, on_source)
    return out


def expansion_potential(safe, conf: ConfidenceField, L: float, h: float, grid: Grid) -> np.ndarray:
    """For each safe cell, how many unsafe cells its upper bound could certify."""
    if L < 0:
        raise InvalidArgument("Lipschitz constant must be >= 0")
    safe = np.asarray(safe, dtype=bool)
    upper = conf.upper
    unsafe = ~safe
    g = np.zeros(grid.shape, dtype=np.int64)
    src = safe & (upper >= h)
    n_unsafe = int(unsafe.sum())
    if not src.any() or n_unsafe == 0:
        return g
    if L == 0:
        g[src] = n_unsafe
        return g
    radius = np.full(grid.shape, -1.0)
    radius[src] = _reach(upper[src], L, h)
    # cells whose reach ends before the nearest unsafe cell count zero
    active = src & (radius >= _clearance(safe, grid) * (1 - _REACH_SLACK))
    if not active.any():
        return g

    def on_offset(ok, sy, sx, ty, tx):
        g[sy, sx] += ok[sy, sx] & unsafe[ty, tx]

    def on_source(iy, ix, win, hit):
        g[iy, ix] = np.count_nonzero(hit & unsafe[win])

    _sweep(active, upper, L, h, grid, radius[active], on_offset, on_source)
    return g


def frontier(safe, potential) -> np.ndarray:
    return np.asarray(safe, dtype=bool) & (np.asarray(potential) > 0)


def update_regions(prev_safe, conf, L, h, grid):
    """One safe-set/frontier step.

    Returns ``(RegionState, stalled)``; ``stalled`` is True when no previously
    safe cell certifies anything and the previous set was retained.
    """
    safe = expand_safe(prev_safe, conf, L, h, grid)
    stalled = False
    if not safe.any():
        log.warning("no safe cell has a lower bound above threshold; retaining previous safe set")
        safe = np.asarray(prev_safe, dtype=bool).copy()
        stalled = True
    g = expansion_potential(safe, conf, L, h, grid)
    return RegionState(safe, frontier(safe, g), g), stalled


def export_layers(directory, grid: Grid, conf: ConfidenceField, state: RegionState) -> None:
    """Write lower/upper/safe/frontier/potential layers as grid files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_grid(directory / "lower.grid", grid, conf.lower)
    write_grid(directory / "upper.grid", grid, conf.upper)
    write_mask(directory / "safe.grid", grid, state.safe)
    write_mask(directory / "frontier.grid", grid, state.frontier)
    write_grid(directory / "potential.grid", grid, state.potential,
               fmt=lambda v: str(int(v)))
