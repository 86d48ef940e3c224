"""Brute-force reference implementations used only by the tests.

Each oracle follows the textbook definition directly and shares no code with
the package path it checks (beyond the grid's distance helper, which defines
what "distance" means).
"""

import math

import numpy as np


def dense_gp_posterior(X, y, Q, signal_variance, length_scale, noise_variance, jitter, prior_mean=0.0):
    """GP posterior by explicit kernel loops and an LU solve."""
    X = np.asarray(X, dtype=float)
    Q = np.asarray(Q, dtype=float)
    n = len(X)

    def k(a, b):
        d2 = (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2
        return signal_variance * math.exp(-d2 / (2 * length_scale ** 2))

    if n == 0:
        return np.full(len(Q), prior_mean), np.full(len(Q), signal_variance)
    K = np.array([[k(X[i], X[j]) for j in range(n)] for i in range(n)])
    K += (noise_variance + jitter * signal_variance) * np.eye(n)
    Ks = np.array([[k(X[i], q) for q in Q] for i in range(n)])
    alpha = np.linalg.solve(K, np.asarray(y, dtype=float) - prior_mean)
    W = np.linalg.solve(K, Ks)
    mean = prior_mean + Ks.T @ alpha
    var = signal_variance - np.sum(Ks * W, axis=0)
    return mean, np.maximum(var, 0.0)


def naive_expand(prev_safe, lower, L, h, grid):
    """All-pairs evaluation of the Lipschitz safe-set union."""
    H, W = grid.shape
    out = np.zeros((H, W), dtype=bool)
    src = [(iy, ix) for iy in range(H) for ix in range(W) if prev_safe[iy, ix]]
    for ty in range(H):
        for tx in range(W):
            for sy, sx in src:
                d = grid.offset_distance(tx - sx, ty - sy)
                if lower[sy, sx] - L * d >= h:
                    out[ty, tx] = True
                    break
    return out


def naive_expand_vec(prev_safe, lower, L, h, grid):
    """Same definition, vectorized over targets; still all pairs."""
    H, W = grid.shape
    ty, tx = np.mgrid[0:H, 0:W]
    out = np.zeros((H, W), dtype=bool)
    for sy, sx in zip(*np.nonzero(prev_safe)):
        d = grid.offset_distance(tx - sx, ty - sy)
        out |= lower[sy, sx] - L * d >= h
    return out


def naive_potential(safe, upper, L, h, grid):
    """All-pairs count of unsafe cells each safe cell's upper bound could certify."""
    H, W = grid.shape
    ty, tx = np.mgrid[0:H, 0:W]
    g = np.zeros((H, W), dtype=np.int64)
    unsafe = ~safe
    for sy, sx in zip(*np.nonzero(safe)):
        d = grid.offset_distance(tx - sx, ty - sy)
        g[sy, sx] = np.count_nonzero(unsafe & (upper[sy, sx] - L * d >= h))
    return g


def union_find_clusters(points, radius):
    """O(k^2) pair scan with union-find; returns a set of frozensets of indices."""
    n = len(points)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if math.dist(points[i], points[j]) <= radius:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), set()).add(i)
    return {frozenset(g) for g in groups.values()}


def point_in_polygon(pt, ring):
    """Even-odd ray casting against one ring (list of vertices, not closed)."""
    x, y = pt
    inside = False
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if xc > x:
                inside = not inside
    return inside


def point_in_shape(pt, exterior, holes=()):
    return point_in_polygon(pt, exterior) and not any(point_in_polygon(pt, h) for h in holes)


def points_in_ring(points, ring):
    """Even-odd ray casting of many points against one ring, edge by edge."""
    P = np.asarray(points, dtype=float)
    x, y = P[:, 0], P[:, 1]
    inside = np.zeros(len(P), dtype=bool)
    R = np.asarray(ring, dtype=float)
    for (x1, y1), (x2, y2) in zip(R, np.roll(R, -1, axis=0)):
        straddle = (y1 > y) != (y2 > y)
        if not straddle.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= straddle & (xc > x)
    return inside


def points_in_shapes(points, shapes):
    """Membership in a union of ``(exterior, holes)`` shapes."""
    out = np.zeros(len(points), dtype=bool)
    for exterior, holes in shapes:
        m = points_in_ring(points, exterior)
        for h in holes:
            m &= ~points_in_ring(points, h)
        out |= m
    return out


def gift_wrap_hull_area(points):
    """Convex hull area by Jarvis march plus the shoelace formula."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float).tolist())))
    if len(pts) < 3:
        return 0.0
    start = pts[0]
    hull = []
    p = start
    while True:
        hull.append(p)
        q = pts[0] if pts[0] != p else pts[1]
        for r in pts:
            cross = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
            if cross < 0 or (cross == 0 and math.dist(p, r) > math.dist(p, q)):
                q = r
        p = q
        if p == start:
            break
    area = 0.0
    for i in range(len(hull)):
        x1, y1 = hull[i]
        x2, y2 = hull[(i + 1) % len(hull)]
        area += x1 * y2 - x2 * y1
    return abs(area) / 2


def segments_intersect_properly(p1, p2, p3, p4):
    def o(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return int(v > 1e-12) - int(v < -1e-12)

    return o(p1, p2, p3) * o(p1, p2, p4) < 0 and o(p3, p4, p1) * o(p3, p4, p2) < 0


def ring_is_simple(ring):
    """No two non-adjacent edges of the ring intersect (O(n^2) sweep)."""
    n = len(ring)
    edges = [(ring[i], ring[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if segments_intersect_properly(*edges[i], *edges[j]):
                return False
    return True
