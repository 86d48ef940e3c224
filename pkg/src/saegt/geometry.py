"""Polygonal free space from a set of safe cells.

Pipeline: cluster the safe cell centers (KD-tree radius graph), wrap each
cluster in a concave hull, enclose everything in an axis-aligned workspace
rectangle and take the rectangle minus the hulls as obstacles.

The concave hull is the edge-digging method: start from the convex hull and
repeatedly replace a long edge ``(a, b)`` by ``(a, p), (p, b)`` where ``p`` is
the closest interior point to that edge, as long as the new edges keep the
polygon simple and no input point falls outside.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import shapely
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, QhullError, cKDTree
from shapely.geometry import MultiPolygon, Polygon, box
from shapely.ops import orient, unary_union

from .errors import GeometryError, InvalidArgument
from .grid import Grid, format_value

log = logging.getLogger(__name__)

_EPS = 1e-12


@dataclass
class FreeSpaceModel:
    hulls: list
    workspace: tuple
    obstacles: list
    free: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.free is None:
            self.free = unary_union(self.hulls) if self.hulls else Polygon()
        shapely.prepare(self.free)

    def contains(self, point) -> bool:
        """Closed point-in-free-space test."""
        return bool(shapely.intersects_xy(self.free, float(point[0]), float(point[1])))

    def contains_many(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return shapely.intersects_xy(self.free, pts[:, 0], pts[:, 1])


# --------------------------------------------------------------------------
# clustering

def cluster_points(points, radius: float) -> list:
    """Connected components of the graph linking points within ``radius``.

    Returns index arrays, each sorted, ordered by their smallest index.
    """
    if radius <= 0:
        raise InvalidArgument("cluster radius must be > 0")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    if n == 0:
        return []
    pairs = cKDTree(pts).query_pairs(radius, output_type="ndarray")
    adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    # relabel by first occurrence so the output does not depend on scipy internals
    _, first = np.unique(labels, return_index=True)
    return [np.flatnonzero(labels == labels[i]) for i in np.sort(first)]


def cluster_safe_points(safe, grid: Grid, radius: float) -> list:
    """Cluster safe cell centers; each cluster is an ``(k, 2)`` array."""
    cells = np.flatnonzero(np.asarray(safe, dtype=bool).ravel())
    if cells.size == 0:
        return []
    pts = grid.centers()[cells]
    return [pts[idx] for idx in cluster_points(pts, radius)]


# --------------------------------------------------------------------------
# concave hull

def _cross(o, a, b):
    return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) - (a[..., 1] - o[..., 1]) * (b[..., 0] - o[..., 0])


def _seg_dist(p, a, b):
    """Distance from points ``p`` (n, 2) to segment ``ab``."""
    ab = b - a
    denom = ab @ ab
    t = np.clip(((p - a) @ ab) / denom, 0.0, 1.0) if denom > 0 else np.zeros(len(p))
    proj = a + t[:, None] * ab
    return np.hypot(p[:, 0] - proj[:, 0], p[:, 1] - proj[:, 1])


def _orient(ox, oy, ax, ay, bx, by):
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


def _between(ox, oy, ax, ay, px, py):
    return ((np.minimum(ox, ax) - _EPS <= px) & (px <= np.maximum(ox, ax) + _EPS)
            & (np.minimum(oy, ay) - _EPS <= py) & (py <= np.maximum(oy, ay) + _EPS))


def _segments_cross(p, q, A, B):
    """Whether segment pq crosses or touches any segment A[i]B[i]."""
    px, py = float(p[0]), float(p[1])
    qx, qy = float(q[0]), float(q[1])
    ax, ay, bx, by = A[:, 0], A[:, 1], B[:, 0], B[:, 1]
    # segments whose bounding boxes miss pq's cannot meet it
    keep = ((np.maximum(ax, bx) >= min(px, qx) - _EPS) & (np.minimum(ax, bx) <= max(px, qx) + _EPS)
            & (np.maximum(ay, by) >= min(py, qy) - _EPS) & (np.minimum(ay, by) <= max(py, qy) + _EPS))
    if not keep.any():
        return False
    ax, ay, bx, by = ax[keep], ay[keep], bx[keep], by[keep]
    d1 = _orient(ax, ay, bx, by, px, py)
    d2 = _orient(ax, ay, bx, by, qx, qy)
    d3 = _orient(px, py, qx, qy, ax, ay)
    d4 = _orient(px, py, qx, qy, bx, by)
    proper = (((d1 > _EPS) & (d2 < -_EPS)) | ((d1 < -_EPS) & (d2 > _EPS))) & \
             (((d3 > _EPS) & (d4 < -_EPS)) | ((d3 < -_EPS) & (d4 > _EPS)))
    touch = ((np.abs(d1) <= _EPS) & _between(ax, ay, bx, by, px, py)) | \
            ((np.abs(d2) <= _EPS) & _between(ax, ay, bx, by, qx, qy)) | \
            ((np.abs(d3) <= _EPS) & _between(px, py, qx, qy, ax, ay)) | \
            ((np.abs(d4) <= _EPS) & _between(px, py, qx, qy, bx, by))
    return bool((proper | touch).any())


def _in_triangle_strict(P, a, b, c):
    """Points strictly inside triangle abc (any orientation)."""
    d1 = _cross(a, b, P)
    d2 = _cross(b, c, P)
    d3 = _cross(c, a, P)
    pos = (d1 > _EPS) & (d2 > _EPS) & (d3 > _EPS)
    neg = (d1 < -_EPS) & (d2 < -_EPS) & (d3 < -_EPS)
    return pos | neg


def _on_open_segment(P, a, b):
    ab = b - a
    t = ((P - a) @ ab) / (ab @ ab)
    return (np.abs(_cross(a, b, P)) <= _EPS) & (t > _EPS) & (t < 1 - _EPS)


def convex_hull_indices(points) -> np.ndarray:
    """Convex hull vertex indices in counter-clockwise order."""
    hull = ConvexHull(points)
    return np.asarray(hull.vertices)  # qhull returns 2D hulls counter-clockwise


def concave_hull(points, shape_param: float, max_candidates: int = 8) -> Polygon:
    """Concave hull whose vertices are a subset of ``points``.

    Edges longer than ``shape_param`` are dug toward the nearest interior
    point within one edge length of the edge's midpoint.  ``shape_param=inf``
    returns the convex hull.
    """
    pts = np.unique(np.asarray(points, dtype=float).reshape(-1, 2), axis=0)
    if len(pts) < 3:
        raise GeometryError("concave hull needs at least 3 distinct points")
    try:
        hull_idx = list(convex_hull_indices(pts))
    except QhullError:
        raise GeometryError("points are collinear") from None

    n = len(pts)
    is_vertex = np.zeros(n, dtype=bool)
    is_vertex[hull_idx] = True
    # vertex ring as a doubly linked list keyed by point index
    nxt = {hull_idx[i]: hull_idx[(i + 1) % len(hull_idx)] for i in range(len(hull_idx))}
    tree = cKDTree(pts)

    def edge_len(a, b):
        return float(np.hypot(*(pts[b] - pts[a])))

    heap = [(-edge_len(a, b), a, b) for a, b in nxt.items()]
    heapq.heapify(heap)
    ring_edges = None  # (start indices, end indices), rebuilt after each dig
    while heap:
        neg_len, a, b = heapq.heappop(heap)
        length = -neg_len
        if nxt.get(a) != b or length <= shape_param:
            continue
        pa, pb = pts[a], pts[b]
        mid = 0.5 * (pa + pb)
        rad = length * (1 + 1e-12)
        # candidates lie within ``rad`` of the midpoint, hence so does the dug
        # triangle; only points and edges near that disk matter
        local = np.asarray(tree.query_ball_point(mid, rad), dtype=int)
        near = local[~is_vertex[local]]
        if near.size == 0:
            continue
        d = _seg_dist(pts[near], pa, pb)
        # only points on the inner side of the edge; the ring is CCW
        side = _cross(pa[None, :], pb[None, :], pts[near])
        keep = side >= -_EPS
        near, d = near[keep], d[keep]
        if near.size == 0:
            continue
        order = np.lexsort((near, d))[:max_candidates]
        if ring_edges is None:
            ring_a = np.asarray(_ring(nxt, a))
            ring_edges = (ring_a, np.roll(ring_a, -1))
        edge_a, edge_b = ring_edges
        A, B = pts[edge_a], pts[edge_b]
        lo, hi = mid - rad, mid + rad
        close = (np.minimum(A[:, 0], B[:, 0]) <= hi[0]) & (np.maximum(A[:, 0], B[:, 0]) >= lo[0]) & \
                (np.minimum(A[:, 1], B[:, 1]) <= hi[1]) & (np.maximum(A[:, 1], B[:, 1]) >= lo[1])
        close &= (edge_a != a) | (edge_b != b)
        masks = [close & (edge_a != end) & (edge_b != end) for end in (a, b)]
        local_pts = pts[local]
        on_ab = _on_open_segment(local_pts, pa, pb).any()
        for k in order:
            p = near[k]
            pp = pts[p]
            # the new edges may only meet the ring at a and b
            if any(_segments_cross(pts[end], pp, A[m], B[m]) for end, m in zip((a, b), masks)):
                continue
            if _in_triangle_strict(local_pts, pa, pp, pb).any():
                continue
            # points on the old edge ab would be left outside unless p is collinear
            if on_ab and abs(float(_cross(pa, pb, pp))) > _EPS:
                continue
            nxt[a] = p
            nxt[p] = b
            is_vertex[p] = True
            ring_edges = None
            heapq.heappush(heap, (-edge_len(a, p), a, p))
            heapq.heappush(heap, (-edge_len(p, b), p, b))
            break

    start = min(nxt)
    ring = _ring(nxt, start)
    poly = Polygon(pts[ring])
    if not poly.is_valid or poly.area <= 0:
        raise GeometryError("concave hull produced an invalid polygon")
    return orient(poly, sign=1.0)


def _ring(nxt, start):
    ring = [start]
    v = nxt[start]
    while v != start:
        ring.append(v)
        v = nxt[v]
    return ring


def hull_for_cluster(points, shape_param: float, resolution: float) -> Polygon:
    """Concave hull, or a small rectangle around degenerate clusters."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    try:
        return concave_hull(pts, shape_param)
    except GeometryError:
        half = 0.5 * resolution
        lo = pts.min(axis=0) - half
        hi = pts.max(axis=0) + half
        return orient(box(lo[0], lo[1], hi[0], hi[1]), sign=1.0)


# --------------------------------------------------------------------------
# workspace and obstacles

def workspace_bbox(hulls, margin: float = 0.0) -> tuple:
    if not hulls:
        raise InvalidArgument("workspace needs at least one hull")
    if margin < 0:
        raise InvalidArgument("margin must be >= 0")
    bounds = np.array([h.bounds for h in hulls])
    return (float(bounds[:, 0].min() - margin), float(bounds[:, 1].min() - margin),
            float(bounds[:, 2].max() + margin), float(bounds[:, 3].max() + margin))


def _polygons(geom) -> list:
    if geom.is_empty:
        return []
    if isinstance(geom, Polygon):
        return [geom]
    if isinstance(geom, MultiPolygon):
        return list(geom.geoms)
    return [g for g in getattr(geom, "geoms", []) if isinstance(g, Polygon) and g.area > 0]


def extract_obstacles(workspace: tuple, hulls, snap: float = 0.0) -> list:
    """Workspace rectangle minus the union of hulls, as simple polygons with holes."""
    ws = box(*workspace)
    free = unary_union(list(hulls)) if hulls else Polygon()
    try:
        diff = ws.difference(free, grid_size=snap or None)
    except shapely.errors.GEOSException:
        if not snap:
            raise GeometryError("polygon difference failed") from None
        try:
            diff = shapely.set_precision(ws, snap * 10).difference(
                shapely.set_precision(free, snap * 10))
        except shapely.errors.GEOSException as exc:
            raise GeometryError(f"polygon difference failed after snapping: {exc}") from None
    return [orient(p, sign=1.0) for p in _polygons(diff) if p.area > 0]


def _merge_overlapping(hulls, snap=0.0):
    """Union hulls whose interiors overlap so the set stays interior-disjoint."""
    hulls = list(hulls)
    if len(hulls) < 2:
        return hulls
    u = unary_union(hulls)
    if snap > 0:
        u = shapely.set_precision(u, snap)
    return [orient(p, sign=1.0) for p in _polygons(u) if p.area > 0]


def cell_footprint(cells, grid: Grid):
    """Union of the closed squares of the given cells, built from row runs."""
    cells = np.asarray(cells, dtype=bool)
    res = grid.resolution
    ox, oy = grid.origin
    rects = []
    for iy in np.flatnonzero(cells.any(axis=1)):
        row = np.concatenate([[False], cells[iy], [False]]).astype(np.int8)
        edges = np.flatnonzero(np.diff(row))
        for x0, x1 in zip(edges[::2], edges[1::2]):
            rects.append(box(ox + x0 * res, oy + iy * res, ox + x1 * res, oy + (iy + 1) * res))
    return unary_union(rects) if rects else Polygon()


def build_free_space(safe, grid: Grid, cluster_radius: float, shape_param: float,
                     margin: float, buffer: float = 0.0,
                     previous: FreeSpaceModel | None = None,
                     clip_to_cells: bool = False) -> FreeSpaceModel:
    """Full pipeline from a safe mask to a :class:`FreeSpaceModel`.

    ``buffer`` dilates each hull (rounded joins) so the free region covers the
    safe cells' area rather than only the polygon through their centers.
    With ``previous``, its hulls are kept and merged with the new ones, so
    free space never shrinks between rebuilds (a concave hull of a larger
    point set need not contain the old one).  ``clip_to_cells`` intersects
    each hull with the safe cells' squares, so free space never reaches into
    a cell outside the safe set.
    """
    clusters = cluster_safe_points(safe, grid, cluster_radius)
    if not clusters:
        raise InvalidArgument("no safe cells to build free space from")
    snap = 1e-9 * grid.resolution
    footprint = cell_footprint(safe, grid) if clip_to_cells else None
    hulls = []
    for pts in clusters:
        h = hull_for_cluster(pts, shape_param, grid.resolution)
        if buffer > 0:
            h = h.buffer(buffer, quad_segs=4)
        if footprint is not None:
            h = h.intersection(footprint)
        h = shapely.set_precision(h, snap)
        hulls.extend(orient(p, sign=1.0) for p in _polygons(h))
    if previous is not None:
        hulls.extend(previous.hulls)
    hulls = _merge_overlapping(hulls, snap)
    ws = workspace_bbox(hulls, margin)
    obstacles = extract_obstacles(ws, hulls, snap)
    return FreeSpaceModel(hulls, ws, obstacles)


def polygon_area(vertices) -> float:
    """Shoelace area, positive for counter-clockwise rings."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


# --------------------------------------------------------------------------
# line-delimited polygon records

def _ring_record(tag, coords):
    coords = np.asarray(coords)[:-1]  # shapely rings repeat the first vertex
    body = " ".join(f"{format_value(x)} {format_value(y)}" for x, y in coords)
    return f"{tag} {len(coords)} {body}"


def polygon_records(model: FreeSpaceModel, extra=()) -> list:
    """Text records ``<tag> <n> x1 y1 ... xn yn``.

    Tags: ``workspace``, ``hull``, ``obstacle``; a ``hole`` record is an
    interior (clockwise) ring of the polygon record before it.  ``extra`` is
    an iterable of ``(tag, Polygon)`` pairs appended at the end.
    """
    xmin, ymin, xmax, ymax = model.workspace
    lines = [_ring_record("workspace", box(xmin, ymin, xmax, ymax).exterior.coords)]
    for tag, polys in (("hull", model.hulls), ("obstacle", model.obstacles)):
        for p in polys:
            lines.append(_ring_record(tag, p.exterior.coords))
            for ring in p.interiors:
                lines.append(_ring_record("hole", ring.coords))
    for tag, p in extra:
        lines.append(_ring_record(tag, p.exterior.coords))
    return lines


def write_polygon_records(path, model: FreeSpaceModel, extra=()) -> None:
    Path(path).write_text("\n".join(polygon_records(model, extra)) + "\n")


def read_polygon_records(path) -> dict:
    """Parse polygon records into ``{tag: [Polygon, ...]}`` (holes attached)."""
    out = {}
    last = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            tag, n = parts[0], int(parts[1])
            xy = np.array([float(t) for t in parts[2:]]).reshape(-1, 2)
        except (IndexError, ValueError) as exc:
            raise GeometryError(f"{path}:{lineno}: malformed polygon record ({exc})") from None
        if len(xy) != n:
            raise GeometryError(f"{path}:{lineno}: expected {n} vertices, found {len(xy)}")
        if tag == "hole":
            if last is None:
                raise GeometryError(f"{path}:{lineno}: hole without a preceding polygon")
            ltag, k = last
            poly = out[ltag][k]
            out[ltag][k] = Polygon(poly.exterior.coords, [*[r.coords for r in poly.interiors], xy])
            continue
        out.setdefault(tag, []).append(Polygon(xy))
        last = (tag, len(out[tag]) - 1)
    return out
