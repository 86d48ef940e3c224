"""Raster rendering of episode snapshots.

A snapshot directory (as written by the episode loop) is turned into an RGB
composite at ``SUPERSAMPLE`` pixels per cell side, north up.  Layers are
painted back to front:

====================  ===========  =========================================
layer                 color        source
====================  ===========  =========================================
safe ground truth     white        terrain file, cells with f >= h
low traversability    gray         terrain file, cells with f < h
obstacles             black        ``obstacle`` polygon records
safe set S_t          light blue   ``safe.grid``
frontier G_t          red          ``frontier.grid``
local free space      green        ``local`` polygon record
subgoal               purple       ``meta.json``
goal                  dark blue    ``meta.json``
robot                 orange       ``meta.json``
====================  ===========  =========================================

Ground-truth layers are only painted when a terrain is passed in; without
one the background is a neutral tone, since the robot never sees the truth.
The composite array is deterministic, so :func:`composite_hash` can pin a
frame in tests independently of the image encoder.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import shapely  # noqa: E402
from matplotlib.patches import Patch  # noqa: E402
from shapely.ops import unary_union  # noqa: E402

from .errors import SaegtError  # noqa: E402
from .geometry import read_polygon_records  # noqa: E402
from .grid import Grid, read_grid  # noqa: E402
from .terrain import TerrainGrid  # noqa: E402

log = logging.getLogger(__name__)

SUPERSAMPLE = 4

COLORS = {
    "background": (236, 232, 224),
    "truth_safe": (255, 255, 255),
    "truth_low": (150, 150, 150),
    "obstacle": (0, 0, 0),
    "safe": (150, 205, 245),
    "frontier": (220, 30, 30),
    "local": (40, 170, 60),
    "subgoal": (140, 40, 170),
    "goal": (20, 40, 140),
    "robot": (245, 150, 20),
}
_PAINT_ORDER = ("truth_safe", "truth_low", "obstacle", "safe", "frontier", "local",
                "goal", "subgoal", "robot")
LABELS = {
    "truth_safe": "safe ground truth",
    "truth_low": "low traversability",
    "obstacle": "obstacles",
    "safe": "safe region",
    "frontier": "frontier",
    "local": "local free space",
    "subgoal": "subgoal",
    "goal": "goal",
    "robot": "robot",
}


class SnapshotError(SaegtError):
    """A snapshot directory is missing files or is malformed."""


@dataclass
class Snapshot:
    path: Path
    grid: Grid
    safe: np.ndarray
    frontier: np.ndarray
    polygons: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def t(self) -> int:
        return int(self.meta.get("t", 0))


def load_snapshot(path) -> Snapshot:
    path = Path(path)
    try:
        grid, safe = read_grid(path / "safe.grid")
        fgrid, frontier = read_grid(path / "frontier.grid")
        meta = json.loads((path / "meta.json").read_text())
    except (OSError, ValueError) as exc:
        raise SnapshotError(f"{path}: {exc}") from None
    if fgrid != grid:
        raise SnapshotError(f"{path}: frontier grid differs from safe grid")
    polys = {}
    geo = path / "geometry.txt"
    if geo.exists():
        try:
            polys = read_polygon_records(geo)
        except (OSError, ValueError) as exc:
            raise SnapshotError(f"{path}: {exc}") from None
    return Snapshot(path, grid, safe.astype(bool), frontier.astype(bool), polys, meta)


def list_snapshots(root) -> list:
    """Snapshot directories under ``root`` (or ``root/snapshots``), in order."""
    root = Path(root)
    if (root / "snapshots").is_dir():
        root = root / "snapshots"
    if (root / "meta.json").exists():
        return [root]
    return sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("iter_"))


# --------------------------------------------------------------------------
# rasterization

def _subpixel_centers(grid: Grid, ss: int):
    """World coordinates of sub-pixel centers, image row 0 = north."""
    h, w = grid.height * ss, grid.width * ss
    ox, oy = grid.origin
    step = grid.resolution / ss
    xs = ox + (np.arange(w) + 0.5) * step
    ys = oy + (np.arange(h)[::-1] + 0.5) * step
    return np.meshgrid(xs, ys)


def _cells_to_pixels(mask, ss):
    # grid rows are south-first; images are north-first
    return np.kron(np.asarray(mask, dtype=bool)[::-1], np.ones((ss, ss), dtype=bool))


def _polygon_mask(polys, X, Y):
    if not polys:
        return np.zeros(X.shape, dtype=bool)
    geom = unary_union(polys)
    shapely.prepare(geom)
    return shapely.contains_xy(geom, X, Y) | shapely.intersects_xy(geom, X, Y)


def _disk(X, Y, center, radius):
    return (X - center[0]) ** 2 + (Y - center[1]) ** 2 <= radius ** 2


def layer_masks(snap: Snapshot, terrain: Optional[TerrainGrid] = None,
                threshold: Optional[float] = None, ss: int = SUPERSAMPLE) -> dict:
    """Boolean pixel mask per legend entry (absent layers are omitted)."""
    grid = snap.grid
    X, Y = _subpixel_centers(grid, ss)
    masks = {}
    if terrain is not None:
        if terrain.grid.shape != grid.shape:
            raise SnapshotError("terrain grid does not match the snapshot grid")
        h = threshold if threshold is not None else float(snap.meta.get("threshold", 0.0))
        low = terrain.values < h
        masks["truth_low"] = _cells_to_pixels(low, ss)
        masks["truth_safe"] = ~masks["truth_low"]
    masks["obstacle"] = _polygon_mask(snap.polygons.get("obstacle", []), X, Y)
    masks["safe"] = _cells_to_pixels(snap.safe, ss)
    masks["frontier"] = _cells_to_pixels(snap.frontier, ss)
    if snap.polygons.get("local"):
        masks["local"] = _polygon_mask(snap.polygons["local"], X, Y)
    r = 0.45 * grid.resolution
    for key in ("subgoal", "goal", "robot"):
        pt = snap.meta.get(key)
        if pt is not None:
            masks[key] = _disk(X, Y, pt, r if key != "robot" else 0.35 * grid.resolution)
    return masks


def composite(snap: Snapshot, terrain: Optional[TerrainGrid] = None,
              threshold: Optional[float] = None, ss: int = SUPERSAMPLE) -> np.ndarray:
    """``(H*ss, W*ss, 3)`` uint8 image of the snapshot."""
    masks = layer_masks(snap, terrain, threshold, ss)
    img = np.empty(masks["safe"].shape + (3,), dtype=np.uint8)
    img[:] = COLORS["background"]
    for key in _PAINT_ORDER:
        if key in masks:
            img[masks[key]] = COLORS[key]
    return img


def composite_hash(image: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(str(image.shape).encode())
    h.update(np.ascontiguousarray(image).tobytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# figures

def _legend_handles(present):
    return [Patch(facecolor=np.asarray(COLORS[k]) / 255, edgecolor="0.3", label=LABELS[k])
            for k in LABELS if k in present]


def _show(ax, snap, image):
    x0, y0, x1, y1 = snap.grid.extent
    ax.imshow(image, extent=(x0, x1, y0, y1), interpolation="nearest", origin="upper")
    ax.set_xlim(x0, x1)
    ax.set_ylim(y0, y1)
    ax.set_aspect("equal")


def render_snapshot(snap: Snapshot, out_path, terrain: Optional[TerrainGrid] = None,
                    threshold: Optional[float] = None, dpi: int = 100) -> str:
    """Write one PNG and return the composite hash."""
    image = composite(snap, terrain, threshold)
    present = set(layer_masks(snap, terrain, threshold))
    fig, ax = plt.subplots(figsize=(6.4, 5.6))
    try:
        _show(ax, snap, image)
        ax.set_title(f"t = {snap.t}")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.legend(handles=_legend_handles(present), loc="upper left", bbox_to_anchor=(1.01, 1.0),
                  fontsize="small", frameon=False)
        fig.savefig(out_path, dpi=dpi, bbox_inches="tight")
    finally:
        plt.close(fig)
    return composite_hash(image)


def pick_progression(snaps, count: int = 9) -> list:
    """``count`` snapshots spread evenly from first to last (all if fewer)."""
    if len(snaps) <= count:
        return list(snaps)
    idx = np.unique(np.rint(np.linspace(0, len(snaps) - 1, count)).astype(int))
    return [snaps[i] for i in idx]


def render_progression(snaps, out_path, terrain: Optional[TerrainGrid] = None,
                       threshold: Optional[float] = None, dpi: int = 100) -> list:
    """3x3 montage of up to nine snapshots; returns their composite hashes."""
    chosen = pick_progression(list(snaps), 9)
    if not chosen:
        raise SnapshotError("no snapshots to render")
    fig, axes = plt.subplots(3, 3, figsize=(10, 10))
    hashes = []
    present = set()
    try:
        for ax, snap in zip(axes.flat, chosen):
            image = composite(snap, terrain, threshold)
            present |= set(layer_masks(snap, terrain, threshold))
            hashes.append(composite_hash(image))
            _show(ax, snap, image)
            ax.set_title(f"t = {snap.t}", fontsize="small")
            ax.set_xticks([])
            ax.set_yticks([])
        for ax in list(axes.flat)[len(chosen):]:
            ax.axis("off")
        fig.legend(handles=_legend_handles(present), loc="lower center", ncol=5,
                   fontsize="small", frameon=False)
        fig.tight_layout(rect=(0, 0.05, 1, 1))
        fig.savefig(out_path, dpi=dpi)
    finally:
        plt.close(fig)
    return hashes


def render_directory(root, out_dir, terrain: Optional[TerrainGrid] = None,
                     threshold: Optional[float] = None, progression: bool = True):
    """Render every snapshot under ``root``.

    Malformed snapshots are skipped with a warning.  Returns
    ``(written, failed)`` where ``written`` maps image path to composite hash.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written, failed, loaded = {}, [], []
    for d in list_snapshots(root):
        try:
            snap = load_snapshot(d)
            out = out_dir / f"{d.name}.png"
            written[str(out)] = render_snapshot(snap, out, terrain, threshold)
            loaded.append(snap)
        except SaegtError as exc:
            log.warning("skipping snapshot %s: %s", d, exc)
            failed.append(d)
    if progression and loaded:
        out = out_dir / "progression.png"
        hashes = render_progression(loaded, out, terrain, threshold)
        written[str(out)] = hashlib.sha256("".join(hashes).encode()).hexdigest()
    return written, failed


def plot_metrics(rows, out_path, dpi: int = 100) -> None:
    """Safe-set and frontier size per iteration, from metrics rows or CSV records."""
    t = [int(r["t"]) for r in rows]
    safe = [int(r["safe_cells"]) for r in rows]
    front = [int(r["frontier_cells"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    try:
        ax.plot(t, safe, color=np.asarray(COLORS["safe"]) / 255 * 0.8, label="safe cells")
        ax.plot(t, front, color=np.asarray(COLORS["frontier"]) / 255, label="frontier cells")
        ax.set_xlabel("iteration")
        ax.set_ylabel("cells")
        ax.legend(frameon=False)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(out_path, dpi=dpi)
    finally:
        plt.close(fig)
