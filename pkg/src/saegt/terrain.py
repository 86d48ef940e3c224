"""Ground-truth terrain grids: file I/O, Lipschitz scans and generators."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidArgument, OutOfBounds
from .grid import Grid, read_grid, write_grid


@dataclass
class TerrainGrid:
    grid: Grid
    values: np.ndarray  # [iy, ix]
    lipschitz: Optional[float] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise InvalidArgument(f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgument("terrain values must be finite")

    def value_at(self, point) -> float:
        return float(self.values.ravel()[self.grid.cell_of(point)])

    def interpolate(self, point) -> float:
        """Bilinear interpolation between cell centers, constant past the outer centers."""
        g = self.grid
        if not g.contains(point):
            raise OutOfBounds(f"point {tuple(point)} outside terrain extent {g.extent}")
        fx = (point[0] - g.origin[0]) / g.resolution - 0.5
        fy = (point[1] - g.origin[1]) / g.resolution - 0.5
        fx = min(max(fx, 0.0), g.width - 1.0)
        fy = min(max(fy, 0.0), g.height - 1.0)
        x0 = min(int(np.floor(fx)), g.width - 2) if g.width > 1 else 0
        y0 = min(int(np.floor(fy)), g.height - 2) if g.height > 1 else 0
        x1 = min(x0 + 1, g.width - 1)
        y1 = min(y0 + 1, g.height - 1)
        tx = fx - x0
        ty = fy - y0
        v = self.values
        top = v[y0, x0] * (1 - tx) + v[y0, x1] * tx
        bot = v[y1, x0] * (1 - tx) + v[y1, x1] * tx
        return float(top * (1 - ty) + bot * ty)


def lipschitz_scan(terrain: TerrainGrid) -> float:
    """Largest finite-difference slope between 8-neighbouring cells."""
    v = terrain.values
    h, w = v.shape
    best = 0.0
    for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
        xs, xs2 = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
        diff = v[dy:, xs2] - v[:h - dy, xs]
        if diff.size:
            step = terrain.grid.resolution * np.hypot(dx, dy)
            best = max(best, float(np.max(np.abs(diff))) / step)
    return best


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_terrain(terrain: TerrainGrid, path, meta: Optional[dict] = None) -> None:
    write_grid(path, terrain.grid, terrain.values)
    info = dict(meta or {})
    if terrain.lipschitz is not None:
        info["lipschitz"] = terrain.lipschitz
    if info:
        sidecar_path(path).write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


def load_terrain(path) -> TerrainGrid:
    grid, values = read_grid(path)
    lip = None
    side = sidecar_path(path)
    if side.exists():
        lip = json.loads(side.read_text()).get("lipschitz")
    return TerrainGrid(grid, values, lip)


# --------------------------------------------------------------------------
# generators

def _grid(width, height, resolution):
    return Grid(int(width), int(height), float(resolution))


def _checked(terrain: TerrainGrid, declared: Optional[float]) -> TerrainGrid:
    measured = lipschitz_scan(terrain)
    if declared is None:
        terrain.lipschitz = measured
    else:
        if measured > declared * (1 + 1e-12):
            raise InvalidArgument(
                f"generated terrain has finite-difference slope {measured:.6g} above declared bound {declared:.6g}")
        terrain.lipschitz = float(declared)
    return terrain


def uniform(width, height, resolution=1.0, value=1500.0, lipschitz=None) -> TerrainGrid:
    g = _grid(width, height, resolution)
    return _checked(TerrainGrid(g, np.full(g.shape, float(value))), lipschitz)


def ramp(width, height, resolution=1.0, base=1000.0, slope=1.0, lipschitz=None) -> TerrainGrid:
    """``f(x, y) = base + slope * x`` at cell centers."""
    g = _grid(width, height, resolution)
    x = g.centers()[:, 0].reshape(g.shape)
    return _checked(TerrainGrid(g, base + slope * x), lipschitz)


def _soft(dist, low, high, ramp_width):
    """``low`` inside the region (dist <= 0) rising linearly to ``high`` over ``ramp_width``."""
    s = np.clip(dist / ramp_width, 0.0, 1.0)
    return low + (high - low) * s


def band_obstacle(width, height, resolution=1.0, low=500.0, high=1500.0,
                  band_y=0.5, band_half=2.0, gap_x=0.8, gap_half=4.0,
                  ramp_width=10.0, lipschitz=None) -> TerrainGrid:
    """Horizontal low-traversability band with one gap.

    ``band_y`` and ``gap_x`` are fractions of the extent; ``band_half``,
    ``gap_half`` and ``ramp_width`` are in world units.  Values rise linearly
    with distance from the band core, so the slope never exceeds
    ``(high - low) / ramp_width``.
    """
    g = _grid(width, height, resolution)
    c = g.centers()
    xmin, ymin, xmax, ymax = g.extent
    cy = ymin + band_y * (ymax - ymin)
    gx = xmin + gap_x * (xmax - xmin)
    # distance to the band core: a strip minus the gap, as a union of two boxes
    left = _box_dist(c, (-np.inf, cy - band_half, gx - gap_half, cy + band_half))
    right = _box_dist(c, (gx + gap_half, cy - band_half, np.inf, cy + band_half))
    d = np.minimum(left, right)
    vals = _soft(d, low, high, ramp_width).reshape(g.shape)
    return _checked(TerrainGrid(g, vals), lipschitz)


def _box_dist(pts, box):
    x0, y0, x1, y1 = box
    dx = np.maximum(np.maximum(x0 - pts[:, 0], pts[:, 0] - x1), 0.0)
    dy = np.maximum(np.maximum(y0 - pts[:, 1], pts[:, 1] - y1), 0.0)
    return np.hypot(dx, dy)


def blob_obstacle(width, height, resolution=1.0, low=500.0, high=1500.0, count=3,
                  radius=4.0, ramp_width=10.0, seed=0, keep_clear=(), lipschitz=None) -> TerrainGrid:
    """Randomly placed circular low-traversability blobs.

    ``keep_clear`` is a list of ``(x, y, r)`` disks no blob core may touch.
    """
    g = _grid(width, height, resolution)
    rng = np.random.default_rng(seed)
    c = g.centers()
    xmin, ymin, xmax, ymax = g.extent
    centers = []
    tries = 0
    while len(centers) < count and tries < 1000 * max(count, 1):
        tries += 1
        p = rng.uniform((xmin, ymin), (xmax, ymax))
        if all(np.hypot(p[0] - kx, p[1] - ky) > kr + radius + ramp_width for kx, ky, kr in keep_clear):
            centers.append(p)
    d = np.full(len(c), np.inf)
    for p in centers:
        d = np.minimum(d, np.maximum(np.hypot(c[:, 0] - p[0], c[:, 1] - p[1]) - radius, 0.0))
    vals = _soft(d, low, high, ramp_width).reshape(g.shape)
    return _checked(TerrainGrid(g, vals), lipschitz)


GENERATORS = {
    "uniform": uniform,
    "ramp": ramp,
    "band-obstacle": band_obstacle,
    "blob-obstacle": blob_obstacle,
}
