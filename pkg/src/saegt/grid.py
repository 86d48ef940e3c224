"""Regular 2D grid geometry and the plain-text grid file format.

Arrays over the grid are indexed ``[iy, ix]`` with ``iy`` growing northward
(world +y).  The flat cell index is row-major, ``iy * width + ix``.

File format::

    GRID <width> <height> <resolution> <origin_x> <origin_y>
    <width values>      # northernmost row (iy = height - 1)
    ...
    <width values>      # southernmost row (iy = 0)

Blank lines and lines starting with ``#`` are ignored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, OutOfBounds, TerrainParseError


@dataclass(frozen=True)
class Grid:
    width: int
    height: int
    resolution: float
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidArgument("grid dimensions must be positive")
        if not (self.resolution > 0 and math.isfinite(self.resolution)):
            raise InvalidArgument("grid resolution must be > 0")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def size(self):
        return self.width * self.height

    @property
    def extent(self):
        """(xmin, ymin, xmax, ymax) of the area covered by the cells."""
        ox, oy = self.origin
        return (ox, oy, ox + self.width * self.resolution, oy + self.height * self.resolution)

    def centers(self) -> np.ndarray:
        """World coordinates of every cell center, row-major, shape (size, 2)."""
        ix, iy = np.meshgrid(np.arange(self.width), np.arange(self.height))
        return np.column_stack([self.cell_x(ix.ravel()), self.cell_y(iy.ravel())])

    def cell_x(self, ix):
        return self.origin[0] + (np.asarray(ix, dtype=float) + 0.5) * self.resolution

    def cell_y(self, iy):
        return self.origin[1] + (np.asarray(iy, dtype=float) + 0.5) * self.resolution

    def center(self, index) -> np.ndarray:
        iy, ix = divmod(int(index), self.width)
        return np.array([self.cell_x(ix), self.cell_y(iy)], dtype=float)

    def contains(self, point) -> bool:
        xmin, ymin, xmax, ymax = self.extent
        x, y = float(point[0]), float(point[1])
        return xmin <= x <= xmax and ymin <= y <= ymax

    def cell_of(self, point) -> int:
        """Flat index of the cell containing ``point`` (edges clamp inward)."""
        if not self.contains(point):
            raise OutOfBounds(f"point {tuple(point)} outside grid extent {self.extent}")
        ix = int(math.floor((point[0] - self.origin[0]) / self.resolution))
        iy = int(math.floor((point[1] - self.origin[1]) / self.resolution))
        ix = min(max(ix, 0), self.width - 1)
        iy = min(max(iy, 0), self.height - 1)
        return iy * self.width + ix

    def cells_of(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        ix = np.floor((pts[:, 0] - self.origin[0]) / self.resolution).astype(int)
        iy = np.floor((pts[:, 1] - self.origin[1]) / self.resolution).astype(int)
        ix = np.clip(ix, 0, self.width - 1)
        iy = np.clip(iy, 0, self.height - 1)
        return iy * self.width + ix

    def offset_distance(self, di, dj):
        """World distance between cells ``di`` columns and ``dj`` rows apart.

        Every cell-to-cell distance in the package goes through here so that
        alternative evaluation orders compare bit-identical numbers.
        """
        return self.resolution * np.hypot(np.asarray(di, dtype=float), np.asarray(dj, dtype=float))

    def disk_mask(self, center, radius) -> np.ndarray:
        """Cells whose centers lie within ``radius`` of ``center``."""
        c = self.centers()
        d = np.hypot(c[:, 0] - center[0], c[:, 1] - center[1])
        return (d <= radius).reshape(self.shape)


def format_value(v) -> str:
    # repr round-trips float64 exactly and is locale independent
    return repr(float(v))


def write_grid(path, grid: Grid, values, fmt=format_value) -> None:
    values = np.asarray(values).reshape(grid.shape)
    lines = [f"GRID {grid.width} {grid.height} {format_value(grid.resolution)} "
             f"{format_value(grid.origin[0])} {format_value(grid.origin[1])}"]
    for iy in range(grid.height - 1, -1, -1):
        lines.append(" ".join(fmt(v) for v in values[iy]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_mask(path, grid: Grid, mask) -> None:
    write_grid(path, grid, np.asarray(mask, dtype=int), fmt=lambda v: str(int(v)))


def read_grid(path):
    """Parse a grid file; returns ``(Grid, values[iy, ix])``."""
    path = Path(path)
    text = path.read_text()
    rows = []
    grid = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if grid is None:
            parts = line.split()
            if len(parts) != 6 or parts[0] != "GRID":
                raise TerrainParseError(
                    "expected header 'GRID <width> <height> <resolution> <origin_x> <origin_y>'",
                    path, lineno)
            try:
                grid = Grid(int(parts[1]), int(parts[2]), float(parts[3]),
                            (float(parts[4]), float(parts[5])))
            except (ValueError, InvalidArgument) as exc:
                raise TerrainParseError(f"bad header: {exc}", path, lineno) from None
            continue
        try:
            row = [float(tok) for tok in line.split()]
        except ValueError as exc:
            raise TerrainParseError(f"bad value: {exc}", path, lineno) from None
        if len(row) != grid.width:
            raise TerrainParseError(
                f"row has {len(row)} values, header declares width {grid.width}", path, lineno)
        if len(rows) == grid.height:
            raise TerrainParseError(
                f"more than {grid.height} rows declared by header", path, lineno)
        rows.append(row)
    if grid is None:
        raise TerrainParseError("missing GRID header", path, 1)
    if len(rows) != grid.height:
        # reported at the end of the file, where the missing rows should be
        raise TerrainParseError(
            f"found {len(rows)} rows, header declares height {grid.height}", path,
            len(text.splitlines()) + 1)
    values = np.array(rows[::-1], dtype=float)
    return grid, values
