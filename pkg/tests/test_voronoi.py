import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from vad import voronoi as V
from vad.core import PointCloud


def _adjacent_by_lp(sites, i, j):
    """Independent adjacency oracle: the bisector of i and j contains a point
    strictly closer to i and j than to every other site."""
    pi, pj = sites[i], sites[j]
    others = [k for k in range(len(sites)) if k not in (i, j)]
    # variables (x, slack); maximize slack subject to
    # 2 x.(pk - pi) + slack <= |pk|^2 - |pi|^2 and the bisector equality
    a_ub = np.array([np.append(2 * (sites[k] - pi), 1.0) for k in others])
    b_ub = np.array([sites[k] @ sites[k] - pi @ pi for k in others])
    a_eq = np.append(2 * (pj - pi), 0.0)[None]
    b_eq = [pj @ pj - pi @ pi]
    res = linprog([0, 0, 0, -1], A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                  bounds=[(None, None)] * 3 + [(None, 1.0)])
    return res.status == 0 and -res.fun > 1e-9


def _adjacency(cx):
    return {(int(a), int(b)) for a, b in np.sort(cx.facet_sites, axis=1)}


def test_two_points_facet_is_midplane():
    pts = np.array([[-0.2, 0, 0], [0.2, 0, 0.0]])
    cx = V.build_voronoi(pts)
    interior = np.flatnonzero(~cx.facet_is_auxiliary)
    assert len(interior) == 1
    poly = cx.facet_polygon(interior[0])
    assert np.allclose(poly[:, 0], 0.0, atol=1e-12)
    # clipped by the corner-site bisectors: bounded, nonzero area
    assert 0 < cx.areas[interior[0]] < np.inf


def test_regular_tetrahedron_matches_halfspace_oracle():
    pts = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1.0]]) * 0.2
    cx = V.build_voronoi(pts)
    interior = cx.facet_sites[~cx.facet_is_auxiliary]
    assert len(interior) == 6
    assert {tuple(sorted(map(int, f))) for f in interior} == set(itertools.combinations(range(4), 2))
    for i in range(len(cx.sites)):
        for j in cx.neighbors(i):
            assert i in cx.neighbors(j)
    # every facet of positive area agrees with the LP oracle on the full site
    # set (this symmetric input also yields zero-area cospherical facets)
    for f in range(cx.n_facets):
        if cx.areas[f] > 1e-9:
            assert _adjacent_by_lp(cx.sites, *cx.facet_sites[f])


def test_random_adjacency_matches_oracle(rng):
    pts = rng.uniform(-0.4, 0.4, (25, 3))
    cx = V.build_voronoi(pts)
    keep = cx.areas > 1e-12
    adj = {(int(a), int(b)) for a, b in np.sort(cx.facet_sites[keep], axis=1) if max(a, b) < 25}
    oracle = {(i, j) for i, j in itertools.combinations(range(25), 2) if _adjacent_by_lp(cx.sites, i, j)}
    assert adj == oracle


def test_facet_vertices_equidistant(rng):
    pts = rng.uniform(-0.4, 0.4, (50, 3))
    cx = V.build_voronoi(pts)
    for f in range(cx.n_facets):
        if cx.facet_is_auxiliary[f]:
            continue
        poly = cx.facet_polygon(f)
        a, b = cx.sites[cx.facet_sites[f]]
        da = np.linalg.norm(poly - a, axis=1)
        db = np.linalg.norm(poly - b, axis=1)
        assert np.max(np.abs(da - db)) < 1e-8
        # and no other site is closer (a true Voronoi vertex)
        d_all = np.linalg.norm(poly[:, None, :] - cx.sites[None], axis=2)
        assert np.all(d_all.min(axis=1) >= da - 1e-8)


def test_degenerate_inputs():
    with pytest.raises(V.DegenerateInput):
        V.build_voronoi(np.zeros((1, 3)))


def _square_complex():
    verts = np.array([[0, -0.5, -0.5], [0, 0.5, -0.5], [0, 0.5, 0.5], [0, -0.5, 0.5]], float)
    return V.VoronoiComplex(
        sites=np.array([[-1, 0, 0], [1, 0, 0.0]]), auxiliary=np.zeros(2, bool), n_points=2,
        tets=np.zeros((0, 4), np.int64), vertices=verts, facet_sites=np.array([[0, 1]]),
        facet_offsets=np.array([0, 4]), facet_vertices=np.arange(4), areas=np.array([1.0]),
        adj_offsets=np.array([0, 1, 2]), adj_indices=np.array([1, 0]))


def test_unit_square_samples():
    s = V.sample_bisectors(_square_complex(), 100, seed=3)
    assert len(s) == 100
    assert np.allclose(s.weights, 0.01)
    assert np.all(np.abs(s.positions[:, 1:]) <= 0.5) and np.all(s.positions[:, 0] == 0)
    with pytest.raises(V.BudgetTooSmall):
        V.sample_bisectors(_square_complex(), 0)


def test_sample_weights_conserve_area(rng):
    cx = V.build_voronoi(rng.uniform(-0.4, 0.4, (60, 3)))
    s = V.sample_bisectors(cx, 2000, seed=1)
    total = cx.areas[~cx.facet_is_auxiliary].sum()
    assert s.weights.sum() == pytest.approx(total, rel=1e-6)
    assert np.all(np.bincount(s.facet_index)[np.flatnonzero(~cx.facet_is_auxiliary)] >= 3)
    a, b = cx.sites[s.site_i], cx.sites[s.site_j]
    assert np.allclose(np.linalg.norm(s.positions - a, axis=1), np.linalg.norm(s.positions - b, axis=1), atol=1e-9)


def _shoelace_centroid(poly):
    # independent formula: project into the polygon plane, 2D shoelace
    c0 = poly.mean(axis=0)
    n = np.cross(poly[1] - poly[0], poly[2] - poly[0])
    n /= np.linalg.norm(n)
    u = poly[1] - poly[0]
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    x, y = (poly - c0) @ u, (poly - c0) @ v
    x1, y1 = np.roll(x, -1), np.roll(y, -1)
    cr = x * y1 - x1 * y
    area = cr.sum() / 2
    cx = ((x + x1) * cr).sum() / (6 * area)
    cy = ((y + y1) * cr).sum() / (6 * area)
    return c0 + cx * u + cy * v, abs(area)


def test_sample_centroid_within_monte_carlo_bound(rng):
    cx = V.build_voronoi(rng.uniform(-0.4, 0.4, (20, 3)))
    interior = np.flatnonzero(~cx.facet_is_auxiliary)
    f = interior[np.argmax(cx.areas[interior])]
    poly = cx.facet_polygon(f)
    ref, area = _shoelace_centroid(poly)
    assert np.allclose(V.polygon_centroid(poly), ref, atol=1e-12)
    assert cx.areas[f] == pytest.approx(area, rel=1e-9)
    s = V.sample_bisectors(cx, 200_000, seed=5)
    sel = s.positions[s.facet_index == f]
    se = sel.std(axis=0) / np.sqrt(len(sel))
    assert np.all(np.abs(sel.mean(axis=0) - ref) <= 3 * se + 1e-12)


def test_two_means_separated_clusters():
    center = np.zeros(3)
    d = np.array([0.1, 0.11, 0.12, 5.0, 5.1])
    dirs = np.array([[1, 0, 0], [1, 0.01, 0], [1, 0, 0.01], [1, -0.01, 0], [1, 0, -0.01]])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = d[:, None] * dirs
    labels, _, near = V.two_means(pts, center)
    assert np.flatnonzero(labels == near).tolist() == [0, 1, 2]


def test_two_means_is_lloyd_fixed_point(rng):
    for _ in range(20):
        pts = rng.normal(size=(20, 3))
        labels, cents, _ = V.two_means(pts, np.zeros(3))
        for k in (0, 1):
            assert np.allclose(cents[k], pts[labels == k].mean(axis=0))
        # with centroids fixed, no single reassignment lowers the objective
        cost = np.sum((pts - cents[labels]) ** 2)
        for i in range(20):
            flipped = labels.copy()
            flipped[i] = 1 - flipped[i]
            assert np.sum((pts - cents[flipped]) ** 2) >= cost - 1e-12


def test_neighbor_sets_small_degree():
    pts = np.array([[0, 0, 0], [0.3, 0, 0], [0, 0.3, 0.05]])
    cx = V.build_voronoi(pts)
    ns = V.neighbor_sets(cx, pts)
    for i in range(3):
        assert sorted(ns[i].tolist()) == sorted(set(range(3)) - {i})


def test_neighbor_sets_batched_matches_scalar(rng):
    pts = rng.uniform(-0.4, 0.4, (80, 3))
    cx = V.build_voronoi(pts)
    ns = V.neighbor_sets(cx, PointCloud(pts))
    for i in range(80):
        nb = cx.neighbors(i)
        nb = nb[nb < 80]
        if len(nb) < 3:
            assert sorted(ns[i]) == sorted(nb)
            continue
        labels, _, near = V.two_means(pts[nb], pts[i])
        assert sorted(ns[i].tolist()) == sorted(nb[labels == near].tolist())
