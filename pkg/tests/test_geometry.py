import math

import numpy as np
import pytest
import shapely
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Polygon, box

from saegt.errors import GeometryError, InvalidArgument
from saegt.geometry import (FreeSpaceModel, build_free_space, cell_footprint, cluster_points,
                            cluster_safe_points, concave_hull, extract_obstacles, hull_for_cluster,
                            polygon_area, read_polygon_records, workspace_bbox,
                            write_polygon_records)
from saegt.grid import Grid

from oracles import (gift_wrap_hull_area, point_in_polygon, points_in_shapes, ring_is_simple,
                     union_find_clusters)


def _ring(poly):
    return [tuple(c) for c in np.asarray(poly.exterior.coords)[:-1]]


def _shape(poly):
    return _ring(poly), [list(map(tuple, r.coords[:-1])) for r in poly.interiors]


def _dist_to_ring(p, ring):
    best = math.inf
    for a, b in zip(ring, ring[1:] + ring[:1]):
        ax, ay = a
        bx, by = b
        dx, dy = bx - ax, by - ay
        t = 0.0 if dx == dy == 0 else max(0.0, min(1.0, ((p[0] - ax) * dx + (p[1] - ay) * dy) / (dx * dx + dy * dy)))
        best = min(best, math.hypot(p[0] - ax - t * dx, p[1] - ay - t * dy))
    return best


def _c_shape(step=0.5):
    pts = []
    for x in np.arange(0, 10 + 1e-9, step):
        for y in np.arange(0, 10 + 1e-9, step):
            if x <= 2 or y <= 2 or y >= 8:
                pts.append((x, y))
    return np.array(pts)


# --- clustering --------------------------------------------------------------

def test_two_distant_cells_form_two_clusters():
    g = Grid(12, 1, 1.0)
    safe = np.zeros(g.shape, bool)
    safe[0, [0, 10]] = True
    assert len(cluster_safe_points(safe, g, 1.5)) == 2


def test_full_block_is_one_cluster():
    g = Grid(3, 3, 1.0)
    cl = cluster_safe_points(np.ones(g.shape, bool), g, 1.5)
    assert len(cl) == 1 and len(cl[0]) == 9


def test_empty_and_bad_radius():
    assert cluster_points(np.empty((0, 2)), 1.0) == []
    with pytest.raises(InvalidArgument):
        cluster_points([(0, 0)], 0.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 60), st.floats(0.3, 4.0))
def test_clusters_match_union_find(seed, n, radius):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 12, (n, 2))
    got = {frozenset(c.tolist()) for c in cluster_points(pts, radius)}
    assert got == union_find_clusters(pts.tolist(), radius)
    # permutation invariance
    perm = rng.permutation(n)
    again = {frozenset(perm[c].tolist()) for c in cluster_points(pts[perm], radius)}
    assert again == got


# --- concave hull ------------------------------------------------------------

@pytest.mark.parametrize("shape_param", [0.1, 1.0, math.inf])
def test_square_corners(shape_param):
    hull = concave_hull([(0, 0), (1, 0), (1, 1), (0, 1)], shape_param)
    assert hull.area == pytest.approx(1.0)
    assert set(_ring(hull)) == {(0, 0), (1, 0), (1, 1), (0, 1)}


def test_infinite_shape_param_is_convex_hull():
    rng = np.random.default_rng(4)
    pts = rng.uniform(0, 10, (80, 2))
    hull = concave_hull(pts, math.inf)
    assert hull.area == pytest.approx(gift_wrap_hull_area(pts), rel=1e-12)


def test_c_shape_is_concave_and_contains_points():
    pts = _c_shape()
    hull = concave_hull(pts, 1.5)
    assert hull.area < gift_wrap_hull_area(pts) - 10
    ring = _ring(hull)
    for p in pts:
        assert point_in_polygon(p, ring) or _dist_to_ring(p, ring) <= 1e-9
    assert ring_is_simple(ring)


def test_hull_vertices_are_input_points():
    pts = _c_shape(1.0)
    inputs = set(map(tuple, pts.tolist()))
    assert set(_ring(concave_hull(pts, 2.0))) <= inputs


def test_hull_is_counter_clockwise():
    hull = concave_hull(_c_shape(1.0), 2.0)
    assert polygon_area(_ring(hull)) > 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(3, 70), st.floats(0.5, 6.0))
def test_fuzzed_hulls_are_simple_and_contain_points(seed, n, shape_param):
    rng = np.random.default_rng(seed)
    pts = np.round(rng.uniform(0, 10, (n, 2)) * 4) / 4  # lattice points give many collinear triples
    try:
        hull = concave_hull(pts, shape_param)
    except GeometryError:
        assert len(np.unique(pts, axis=0)) < 3 or np.linalg.matrix_rank(pts - pts[0]) < 2
        return
    ring = _ring(hull)
    assert hull.is_valid
    assert ring_is_simple(ring)
    for p in pts:
        assert point_in_polygon(p, ring) or _dist_to_ring(p, ring) <= 1e-9


def test_degenerate_clusters():
    with pytest.raises(GeometryError):
        concave_hull([(0, 0), (1, 1)], 1.0)
    with pytest.raises(GeometryError):
        concave_hull([(0, 0), (1, 1), (2, 2)], 1.0)
    rect = hull_for_cluster([(0, 0), (1, 0), (2, 0)], 1.0, resolution=1.0)
    assert rect.bounds == (-0.5, -0.5, 2.5, 0.5)
    single = hull_for_cluster([(3, 3)], 1.0, resolution=2.0)
    assert single.area == pytest.approx(4.0)


# --- workspace and obstacles -------------------------------------------------

def test_workspace_bbox_examples():
    sq = box(0, 0, 1, 1)
    assert workspace_bbox([sq]) == (0, 0, 1, 1)
    assert workspace_bbox([sq], 0.5) == (-0.5, -0.5, 1.5, 1.5)
    assert workspace_bbox([sq, box(5, -2, 6, -1)]) == (0, -2, 6, 1)
    with pytest.raises(InvalidArgument):
        workspace_bbox([])


def test_obstacles_empty_when_hull_fills_workspace():
    assert extract_obstacles((0, 0, 2, 2), [box(0, 0, 2, 2)]) == []


def test_obstacle_with_hole():
    obs = extract_obstacles((0, 0, 3, 3), [box(1, 1, 2, 2)])
    assert len(obs) == 1
    assert len(obs[0].interiors) == 1
    assert obs[0].area == pytest.approx(8.0)


def _random_model(seed, H=25, W=25, res=1.0, density=0.45, clip=True):
    rng = np.random.default_rng(seed)
    g = Grid(W, H, res)
    # blobby masks: threshold a smoothed noise field
    noise = rng.random((H + 4, W + 4))
    k = np.ones((3, 3)) / 9
    sm = sum(np.roll(np.roll(noise, i, 0), j, 1) * k[i + 1, j + 1] for i in (-1, 0, 1) for j in (-1, 0, 1))
    safe = sm[2:-2, 2:-2] > np.quantile(sm, 1 - density)
    safe[H // 2, W // 2] = True
    model = build_free_space(safe, g, 1.5 * res, 3.0 * res, 2.0 * res, 0.5 * res, clip_to_cells=clip)
    return g, safe, model, rng


@pytest.mark.parametrize("seed", range(6))
def test_partition_area_and_probes(seed):
    g, safe, model, rng = _random_model(seed, res=float([0.5, 1.0, 2.0][seed % 3]))
    ws = model.workspace
    ws_area = (ws[2] - ws[0]) * (ws[3] - ws[1])
    total = sum(h.area for h in model.hulls) + sum(o.area for o in model.obstacles)
    assert total == pytest.approx(ws_area, rel=1e-6)
    probes = rng.uniform((ws[0], ws[1]), (ws[2], ws[3]), (10_000, 2))
    in_hull = points_in_shapes(probes, [_shape(h) for h in model.hulls])
    in_obs = points_in_shapes(probes, [_shape(o) for o in model.obstacles])
    agree = np.count_nonzero(in_obs == ~in_hull)
    assert agree / len(probes) >= 0.999


@pytest.mark.parametrize("seed", range(4))
def test_hulls_disjoint_and_inside_workspace(seed):
    _, _, model, _ = _random_model(seed)
    ws = box(*model.workspace)
    for i, a in enumerate(model.hulls):
        assert a.is_valid
        assert ws.covers(a)
        for b in model.hulls[i + 1:]:
            assert a.intersection(b).area <= 1e-9


@pytest.mark.parametrize("seed", range(4))
def test_clipped_free_space_stays_on_safe_cells(seed):
    g, safe, model, _ = _random_model(seed)
    foot = cell_footprint(safe, g)
    assert model.free.difference(foot).area <= 1e-9
    # every safe cell center is free
    assert model.contains_many(g.centers()[safe.ravel()]).all()


def test_cell_footprint_area():
    g = Grid(6, 4, 0.5)
    m = np.zeros(g.shape, bool)
    m[0, 1:4] = m[2, :] = m[3, 5] = True
    assert cell_footprint(m, g).area == pytest.approx(m.sum() * 0.25)
    assert cell_footprint(np.zeros(g.shape, bool), g).is_empty


def test_rebuild_with_previous_never_shrinks():
    g, safe, model, rng = _random_model(1)
    grown = safe | np.roll(safe, 1, axis=1)
    nxt = build_free_space(grown, g, 1.5, 3.0, 2.0, 0.5, previous=model, clip_to_cells=True)
    assert model.free.difference(nxt.free).area <= 1e-9


def test_build_rejects_empty_mask():
    g = Grid(3, 3, 1.0)
    with pytest.raises(InvalidArgument):
        build_free_space(np.zeros(g.shape, bool), g, 1.5, 3.0, 2.0)


def test_polygon_records_round_trip(tmp_path):
    _, _, model, _ = _random_model(2)
    local = Polygon([(1, 1), (2, 1), (2, 2)])
    write_polygon_records(tmp_path / "g.txt", model, [("local", local)])
    recs = read_polygon_records(tmp_path / "g.txt")
    assert sum(p.area for p in recs["hull"]) == pytest.approx(sum(h.area for h in model.hulls), rel=1e-12)
    assert sum(p.area for p in recs["obstacle"]) == pytest.approx(
        sum(o.area for o in model.obstacles), rel=1e-12)
    assert recs["local"][0].equals(local)


def test_polygon_area_shoelace():
    assert polygon_area([(0, 0), (2, 0), (2, 3), (0, 3)]) == 6.0
    assert polygon_area([(0, 0), (0, 3), (2, 3), (2, 0)]) == -6.0


def test_model_contains_is_closed():
    m = FreeSpaceModel([box(0, 0, 1, 1)], (0, 0, 1, 1), [])
    assert m.contains((1.0, 0.5)) and not m.contains((1.01, 0.5))
    np.testing.assert_array_equal(m.contains_many([(0.5, 0.5), (2, 2)]), [True, False])
    assert shapely.is_prepared(m.free)
