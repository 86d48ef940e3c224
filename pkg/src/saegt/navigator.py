"""Reactive point-robot controller inside polygonal free space.

This is a deliberately simple stand-in for a diffeomorphic sphere-world
controller: around the robot we build a convex cell that no obstacle edge
enters (a sensing disk cut by one separating half-plane per nearby edge),
project the subgoal onto that cell and take a bounded step toward the
projection.  Every tick stays inside the cell, hence inside free space; what
is given up is global convergence in non-convex free space.  When a direct
approach stalls, :func:`plan_route` finds a detour through free space and
:func:`navigate_route` runs the same controller along it leg by leg.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import shapely
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from shapely.geometry import Polygon

from .errors import ContainmentViolation, InvalidArgument
from .geometry import FreeSpaceModel
from .grid import Grid

# vertices of the polygonal sensing disk
DISK_VERTICES = 32
# half-planes keep this fraction of the sensing radius clear of each edge,
# or the current gap when the robot is already closer (it may then not
# approach further); a relative pull-back would let the gap decay to zero
_STANDOFF = 1e-4


@dataclass
class RobotState:
    position: np.ndarray
    max_step: float

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).copy()
        if not self.max_step > 0:
            raise InvalidArgument("max_step must be > 0")


@dataclass
class LocalFreeSpace:
    vertices: np.ndarray  # CCW, not closed

    @property
    def polygon(self) -> Polygon:
        return Polygon(self.vertices)

    def contains(self, p, tol=1e-9) -> bool:
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        cross = (w[:, 0] - v[:, 0]) * (p[1] - v[:, 1]) - (w[:, 1] - v[:, 1]) * (p[0] - v[:, 0])
        return bool(np.all(cross >= -tol * np.hypot(w[:, 0] - v[:, 0], w[:, 1] - v[:, 1])))


def obstacle_segments(model: FreeSpaceModel) -> np.ndarray:
    """All free-space boundary edges as an ``(m, 4)`` array ``x0 y0 x1 y1``."""
    segs = []
    polys = getattr(model.free, "geoms", [model.free])
    for p in polys:
        for ring in (p.exterior, *p.interiors):
            c = np.asarray(ring.coords)
            segs.append(np.hstack([c[:-1], c[1:]]))
    if not segs:
        return np.empty((0, 4))
    return np.vstack(segs)


def _closest_on_segments(p, segs):
    a = segs[:, :2]
    ab = segs[:, 2:] - a
    denom = np.einsum("ij,ij->i", ab, ab)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(denom > 0, np.einsum("ij,ij->i", p - a, ab) / denom, 0.0)
    t = np.clip(t, 0.0, 1.0)
    q = a + t[:, None] * ab
    return q, np.hypot(p[0] - q[:, 0], p[1] - q[:, 1])


def clip_halfplane(poly: np.ndarray, point, normal) -> np.ndarray:
    """Keep the part of a convex polygon where ``(z - point) . normal >= 0``."""
    s = (poly - point) @ normal
    if len(s) and s.min() >= 0:
        return poly
    pts = poly.tolist()
    s = s.tolist()
    out = []
    n = len(pts)
    for i in range(n):
        j = (i + 1) % n
        si, sj = s[i], s[j]
        if si >= 0:
            out.append(pts[i])
        if (si >= 0) != (sj >= 0):
            t = si / (si - sj)
            (xi, yi), (xj, yj) = pts[i], pts[j]
            out.append([xi + t * (xj - xi), yi + t * (yj - yi)])
    return np.array(out) if out else np.empty((0, 2))


def local_free_space(robot: RobotState, model: FreeSpaceModel, sensing_radius: float,
                     segments=None) -> LocalFreeSpace:
    """Convex obstacle-free cell around the robot.

    ``segments`` may carry a cached :func:`obstacle_segments` result.
    """
    p = robot.position
    if not model.contains(p):
        raise ContainmentViolation(f"robot at {tuple(p)} is outside free space")
    if segments is None:
        segments = obstacle_segments(model)
    standoff = _STANDOFF * sensing_radius
    ang = 2 * np.pi * np.arange(DISK_VERTICES) / DISK_VERTICES
    poly = p + sensing_radius * np.column_stack([np.cos(ang), np.sin(ang)])
    if len(segments):
        q, d = _closest_on_segments(p, segments)
        # tangent edges count too, or a disk vertex can sit on the boundary
        near = np.flatnonzero(d < sensing_radius + standoff)
        for k in near[np.argsort(d[near], kind="stable")]:
            if d[k] <= 0:
                raise ContainmentViolation(f"robot at {tuple(p)} lies on the free-space boundary")
            normal = (p - q[k]) / d[k]
            anchor = q[k] + min(standoff, d[k]) * normal
            poly = clip_halfplane(poly, anchor, normal)
            if len(poly) < 3:
                raise ContainmentViolation("local free space collapsed")
    return LocalFreeSpace(poly)


def project_onto(lfs: LocalFreeSpace, point) -> np.ndarray:
    """Euclidean projection onto the convex local free space."""
    point = np.asarray(point, dtype=float)
    if lfs.contains(point, tol=0.0):
        return point.copy()
    v = lfs.vertices
    segs = np.hstack([v, np.roll(v, -1, axis=0)])
    q, d = _closest_on_segments(point, segs)
    return q[int(np.argmin(d))]


def step(robot: RobotState, subgoal, lfs: LocalFreeSpace) -> RobotState:
    """Move at most ``max_step`` straight toward the subgoal's projection."""
    target = project_onto(lfs, subgoal)
    delta = target - robot.position
    dist = float(np.hypot(*delta))
    if dist <= robot.max_step:
        new = target
    else:
        new = robot.position + robot.max_step * delta / dist
    return RobotState(new, robot.max_step)


@dataclass
class NavResult:
    robot: RobotState
    path: list
    arrived: bool
    stalled: bool
    ticks: int


def navigate(robot: RobotState, subgoal, model: FreeSpaceModel, sensing_radius: float,
             arrival_tol: float, stall_window: int = 50, max_ticks: int = 10000,
             on_tick=None) -> NavResult:
    """Tick the controller until arrival, stall or ``max_ticks``.

    A stall is ``stall_window`` consecutive ticks without reducing the best
    distance to the subgoal by more than ``0.01 * max_step``.
    """
    subgoal = np.asarray(subgoal, dtype=float)
    segs = obstacle_segments(model)
    path = []
    best = float(np.hypot(*(subgoal - robot.position)))
    since = 0
    ticks = 0
    while ticks < max_ticks:
        gap = float(np.hypot(*(subgoal - robot.position)))
        if gap <= arrival_tol:
            if 0 < gap <= robot.max_step:
                # finish on the subgoal itself when the local cell allows it
                lfs = local_free_space(robot, model, sensing_radius, segs)
                if lfs.contains(subgoal, tol=0.0):
                    robot = RobotState(subgoal, robot.max_step)
                    ticks += 1
                    path.append(robot.position.copy())
                    if on_tick is not None:
                        on_tick(ticks, robot, lfs)
            return NavResult(robot, path, True, False, ticks)
        lfs = local_free_space(robot, model, sensing_radius, segs)
        robot = step(robot, subgoal, lfs)
        ticks += 1
        path.append(robot.position.copy())
        if on_tick is not None:
            on_tick(ticks, robot, lfs)
        gap = float(np.hypot(*(subgoal - robot.position)))
        if gap < best - 0.01 * robot.max_step:
            best = gap
            since = 0
        else:
            since += 1
            if since >= stall_window:
                return NavResult(robot, path, False, True, ticks)
    return NavResult(robot, path, False, True, ticks)


# --------------------------------------------------------------------------
# detours around concave free space

def _visible(region, a, b) -> np.ndarray:
    """Vectorized: does the segment a[i]-b[i] lie inside ``region``?"""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    lines = shapely.linestrings(np.stack([a, b], axis=1))
    return shapely.covers(region, lines)


def plan_route(start, goal, model: FreeSpaceModel, grid: Grid, clearance: float):
    """Waypoints from ``start`` to ``goal`` through free space, or None.

    Nodes are the cell centers at least ``clearance`` inside free space plus
    the two endpoints; edges join 8-neighbours whose straight segment stays
    inside the shrunken region, and the endpoints to nearby centers whose
    segment stays inside free space proper (a stalled robot may sit closer
    to a wall than ``clearance``).  The shortest node path is then shortened
    greedily by line of sight.
    """
    region = model.free.buffer(-clearance) if clearance > 0 else model.free
    if region.is_empty:
        return None
    shapely.prepare(region)
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    centers = grid.centers()
    inside = np.flatnonzero(shapely.intersects_xy(region, centers[:, 0], centers[:, 1]))
    pts = np.vstack([centers[inside], start, goal])
    n = len(pts)
    s_node, g_node = n - 2, n - 1
    local = np.full(grid.size, -1)
    local[inside] = np.arange(len(inside))
    W, H = grid.width, grid.height
    iy, ix = np.divmod(inside, W)
    ea, eb = [], []
    for dx, dy in ((1, 0), (0, 1), (1, 1), (1, -1)):
        jx, jy = ix + dx, iy + dy
        ok = (jx >= 0) & (jx < W) & (jy >= 0) & (jy < H)
        nb = np.full(len(inside), -1)
        nb[ok] = local[jy[ok] * W + jx[ok]]
        keep = nb >= 0
        ea.append(np.flatnonzero(keep))
        eb.append(nb[keep])
    # endpoints connect to centers within two cells
    reach = 2.0 * grid.resolution * np.sqrt(2)
    for node in (s_node, g_node):
        d = np.hypot(*(pts[:-2] - pts[node]).T)
        near = np.flatnonzero(d <= reach)
        ea.append(near)
        eb.append(np.full(len(near), node))
    ea = np.concatenate(ea)
    eb = np.concatenate(eb)
    if not len(ea):
        return None
    endpoint = (ea >= s_node) | (eb >= s_node)
    vis = np.where(endpoint, _visible(model.free, pts[ea], pts[eb]), _visible(region, pts[ea], pts[eb]))
    ea, eb = ea[vis], eb[vis]
    w = np.hypot(*(pts[ea] - pts[eb]).T)
    graph = coo_matrix((w, (ea, eb)), shape=(n, n)).tocsr()
    dist, pred = dijkstra(graph, directed=False, indices=s_node, return_predecessors=True)
    if not np.isfinite(dist[g_node]):
        return None
    chain = [g_node]
    while chain[-1] != s_node:
        chain.append(pred[chain[-1]])
    chain = chain[::-1]
    # greedy line-of-sight shortening; legs touching an endpoint use free
    # space proper, like the endpoint edges above
    out = []
    i = 0
    while i < len(chain) - 1:
        ahead = np.asarray(chain[i + 1:])
        a = np.repeat(pts[chain[i]][None], len(ahead), 0)
        loose = _visible(model.free, a, pts[ahead])
        tight = _visible(region, a, pts[ahead])
        end = (chain[i] >= s_node) | (ahead >= s_node)
        ok = np.flatnonzero(np.where(end, loose, tight))
        j = i + 1 + (int(ok[-1]) if len(ok) else 0)
        out.append(pts[chain[j]])
        i = j
    return out


def navigate_route(robot: RobotState, waypoints, model: FreeSpaceModel, sensing_radius: float,
                   arrival_tol: float, stall_window: int = 50, max_ticks: int = 10000,
                   on_tick=None) -> NavResult:
    """Track ``waypoints`` leg by leg with :func:`navigate`.

    Intermediate waypoints only need to be passed within ``arrival_tol``;
    the last one is the subgoal.
    """
    path = []
    ticks = 0
    for k, wp in enumerate(waypoints):
        def tick(i, rb, lfs, base=ticks):
            if on_tick is not None:
                on_tick(base + i, rb, lfs)
        res = navigate(robot, wp, model, sensing_radius, arrival_tol, stall_window,
                       max_ticks - ticks, on_tick=tick)
        robot = res.robot
        path.extend(res.path)
        ticks += res.ticks
        if not res.arrived:
            return NavResult(robot, path, False, True, ticks)
    return NavResult(robot, path, True, False, ticks)
