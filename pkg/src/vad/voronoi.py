"""Clipped 3D Voronoi complex via the Delaunay dual, bisector sampling and
2-means neighbor selection.

Eight auxiliary sites at the corners of the data cube scaled five times bound
every input cell.  Facets touching an auxiliary site are kept for adjacency
but never sampled.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .core import PointCloud, VadError

log = logging.getLogger(__name__)

CORNER_SCALE = 5.0
_QHULL_ATTEMPTS = (None, "QJ", "QJ QR1", "QJ QR2")
_FLAT_TOL = 1e-12
_PAD_WIDTH = 64


class DegenerateInput(VadError):
    pass


class BudgetTooSmall(VadError):
    pass


@dataclass(frozen=True, eq=False)
class VoronoiComplex:
    """Bounded Voronoi facets of the input sites plus the auxiliary corners.

    Facet ``f`` separates ``facet_sites[f]``; its polygon is the ordered loop
    ``vertices[facet_vertices[facet_offsets[f]:facet_offsets[f + 1]]]``.
    Voronoi vertices are the circumcenters of the Delaunay tetrahedra
    ``tets``.
    """

    sites: np.ndarray
    auxiliary: np.ndarray
    n_points: int
    tets: np.ndarray
    vertices: np.ndarray
    facet_sites: np.ndarray
    facet_offsets: np.ndarray
    facet_vertices: np.ndarray
    areas: np.ndarray
    adj_offsets: np.ndarray
    adj_indices: np.ndarray

    @property
    def n_facets(self):
        return len(self.facet_sites)

    @property
    def facet_is_auxiliary(self):
        return np.any(self.facet_sites >= self.n_points, axis=1)

    def facet_polygon(self, f):
        return self.vertices[self.facet_vertices[self.facet_offsets[f]:self.facet_offsets[f + 1]]]

    def neighbors(self, i):
        return self.adj_indices[self.adj_offsets[i]:self.adj_offsets[i + 1]]

    def site_tets(self):
        """CSR map site -> incident tetrahedra."""
        owner = self.tets.ravel()
        order = np.argsort(owner, kind="stable")
        counts = np.bincount(owner, minlength=len(self.sites))
        offsets = np.concatenate([[0], np.cumsum(counts)])
        return offsets, order // 4

    def to_obj_lines(self, path, interior_only=True):
        """Write facet outlines as an OBJ line soup for inspection."""
        keep = ~self.facet_is_auxiliary if interior_only else np.ones(self.n_facets, bool)
        with open(path, "w") as fh:
            for v in self.vertices:
                fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
            for f in np.flatnonzero(keep):
                loop = self.facet_vertices[self.facet_offsets[f]:self.facet_offsets[f + 1]] + 1
                fh.write("l " + " ".join(map(str, loop)) + f" {loop[0]}\n")


@dataclass(frozen=True, eq=False)
class BisectorSamples:
    positions: np.ndarray
    weights: np.ndarray
    facet_index: np.ndarray
    site_i: np.ndarray
    site_j: np.ndarray

    def __len__(self):
        return len(self.weights)


def corner_sites(points):
    """Corners of the bounding cube of ``points`` scaled by five about its center."""
    lo, hi = points.min(axis=0), points.max(axis=0)
    center = 0.5 * (lo + hi)
    half = 0.5 * float(np.max(hi - lo)) * CORNER_SCALE
    signs = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64)
    return center + half * signs


def _circumcenters(sites, tets):
    a = sites[tets[:, 0]]
    m = sites[tets[:, 1:]] - a[:, None, :]
    rhs = 0.5 * np.einsum("tij,tij->ti", m, m)
    vol = np.linalg.det(m)
    scale = np.max(np.linalg.norm(m, axis=2), axis=1) ** 3
    flat = np.abs(vol) <= _FLAT_TOL * scale
    m_safe = m.copy()
    m_safe[flat] = np.eye(3)
    c = np.linalg.solve(m_safe, rhs[..., None])[..., 0] + a
    return c, flat


def _resolve_cocircular(sites, tri, centers, flat):
    """Give cocircular flat tetrahedra a valid Voronoi vertex in place.

    Four cocircular sites are equidistant from every point of the circle's
    axis, and so are the circumcenters of the non-flat neighbors across each
    face (each passes through three of the four).  The mean of those
    neighbor centers lies on the axis; it is accepted only when it is
    equidistant to all four vertices.  Returns the mask of resolved tets.
    """
    resolved = np.zeros(len(flat), bool)
    for t in np.flatnonzero(flat):
        nb = tri.neighbors[t]
        nb = nb[(nb >= 0)]
        nb = nb[~flat[nb]]
        if nb.size == 0:
            continue
        c = centers[nb].mean(axis=0)
        d = np.linalg.norm(sites[tri.simplices[t]] - c, axis=1)
        if np.ptp(d) <= 1e-9 * max(float(d.max()), 1e-300):
            centers[t] = c
            resolved[t] = True
    return resolved


def _delaunay(sites, aux):
    """Qhull Delaunay, retried with joggle until every site is used and no
    tetrahedron touching a data point is flat.  Flat tetrahedra spanned by
    four corner sites (a cube face) only feed unbounded corner-corner facets
    and are tolerated; their center is set to the centroid.  Flat tetrahedra
    with four cocircular vertices are resolved by :func:`_resolve_cocircular`."""
    last = None
    for opts in _QHULL_ATTEMPTS:
        try:
            tri = Delaunay(sites, qhull_options=opts) if opts else Delaunay(sites)
        except QhullError as exc:
            last = exc
            continue
        used = np.zeros(len(sites), bool)
        used[tri.simplices.ravel()] = True
        centers, flat = _circumcenters(sites, tri.simplices)
        corner_only = aux[tri.simplices].all(axis=1)
        centers[flat & corner_only] = sites[tri.simplices[flat & corner_only]].mean(axis=1)
        flat &= ~corner_only
        flat &= ~_resolve_cocircular(sites, tri, centers, flat)
        if used.all() and not flat.any():
            if opts:
                log.info("Delaunay needed qhull options %r", opts)
            return tri, centers
        last = f"{int(flat.sum())} flat tetrahedra, {int((~used).sum())} sites dropped"
    raise DegenerateInput(f"could not build a nondegenerate Delaunay tetrahedralization ({last})")


def _plane_basis(normals):
    # any unit vector orthogonal to each row
    pick = np.where(np.abs(normals[:, :1]) < 0.9, np.array([[1.0, 0, 0]]), np.array([[0, 1.0, 0]]))
    u = np.cross(normals, pick)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = np.cross(normals, u)
    return u, v


def build_voronoi(cloud):
    """Voronoi complex of the cloud plus eight auxiliary corner sites."""
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    n = len(points)
    if n < 2:
        raise DegenerateInput("need at least two points")
    sites = np.vstack([points, corner_sites(points)])
    aux = np.zeros(len(sites), bool)
    aux[n:] = True
    tri, centers = _delaunay(sites, aux)
    tets = np.ascontiguousarray(tri.simplices, dtype=np.int64)
    ns = len(sites)

    # every (tet, edge) incidence
    pairs = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
    ea = tets[:, pairs[:, 0]].ravel()
    eb = tets[:, pairs[:, 1]].ravel()
    lo, hi = np.minimum(ea, eb), np.maximum(ea, eb)
    inc_tet = np.repeat(np.arange(len(tets)), 6)
    key = lo * ns + hi
    edges, edge_of_inc = np.unique(key, return_inverse=True)
    edge_sites = np.stack([edges // ns, edges % ns], axis=1)

    # edges on the convex hull (corner-corner only) have unbounded facets
    hull = np.sort(tri.convex_hull, axis=1)
    hull_keys = np.concatenate([hull[:, 0] * ns + hull[:, 1], hull[:, 0] * ns + hull[:, 2], hull[:, 1] * ns + hull[:, 2]])
    bounded = ~np.isin(edges, hull_keys)

    # order each ring of circumcenters by angle inside the bisector plane
    pa, pb = sites[edge_sites[:, 0]], sites[edge_sites[:, 1]]
    normal = pb - pa
    normal /= np.linalg.norm(normal, axis=1, keepdims=True)
    u, v = _plane_basis(normal)
    q = centers[inc_tet] - 0.5 * (pa + pb)[edge_of_inc]
    cu = np.einsum("ij,ij->i", q, u[edge_of_inc])
    cv = np.einsum("ij,ij->i", q, v[edge_of_inc])
    counts = np.bincount(edge_of_inc, minlength=len(edges))
    mu = np.bincount(edge_of_inc, cu, len(edges)) / counts
    mv = np.bincount(edge_of_inc, cv, len(edges)) / counts
    ang = np.arctan2(cv - mv[edge_of_inc], cu - mu[edge_of_inc])
    order = np.lexsort((ang, edge_of_inc))

    keep_inc = bounded[edge_of_inc[order]]
    facet_vertices = inc_tet[order][keep_inc]
    fcounts = counts[bounded]
    facet_offsets = np.concatenate([[0], np.cumsum(fcounts)]).astype(np.int64)
    facet_sites = edge_sites[bounded]
    areas = _polygon_areas(centers, facet_offsets, facet_vertices)

    # symmetric adjacency from all Delaunay edges
    both = np.concatenate([edge_sites, edge_sites[:, ::-1]])
    both = both[np.lexsort((both[:, 1], both[:, 0]))]
    adj_counts = np.bincount(both[:, 0], minlength=ns)
    adj_offsets = np.concatenate([[0], np.cumsum(adj_counts)]).astype(np.int64)

    return VoronoiComplex(
        sites=sites, auxiliary=aux, n_points=n, tets=tets, vertices=centers,
        facet_sites=facet_sites, facet_offsets=facet_offsets, facet_vertices=facet_vertices,
        areas=areas, adj_offsets=adj_offsets, adj_indices=both[:, 1].copy(),
    )


def _fan(vertices, offsets, loop):
    """Fan triangles (centroid, v_k, v_k+1) of every polygon."""
    counts = np.diff(offsets)
    owner = np.repeat(np.arange(len(counts)), counts)
    pos = vertices[loop]
    cen = np.add.reduceat(pos, offsets[:-1], axis=0) / counts[:, None]
    nxt = np.arange(len(loop)) + 1
    ends = offsets[1:] - 1
    nxt[ends] = offsets[:-1]
    return owner, cen[owner], pos, pos[nxt]


def _polygon_areas(vertices, offsets, loop):
    owner, c, a, b = _fan(vertices, offsets, loop)
    tri_area = 0.5 * np.linalg.norm(np.cross(a - c, b - c), axis=1)
    return np.bincount(owner, tri_area, len(offsets) - 1)


def polygon_centroid(poly):
    """Area centroid of a planar convex polygon given as an ordered loop."""
    c0 = poly.mean(axis=0)
    a, b = poly, np.roll(poly, -1, axis=0)
    w = 0.5 * np.linalg.norm(np.cross(a - c0, b - c0), axis=1)
    return (w[:, None] * (c0 + a + b) / 3).sum(axis=0) / w.sum()


def sample_bisectors(complex_, budget, seed=0):
    """Uniform area samples on every facet between two input points.

    Facet ``f`` receives ``max(3, round(budget * area_f / total_area))``
    samples of weight ``area_f / m_f``.
    """
    interior = np.flatnonzero(~complex_.facet_is_auxiliary)
    if budget < len(interior):
        raise BudgetTooSmall(f"budget {budget} below the number of interior facets {len(interior)}")
    rng = np.random.default_rng(seed)
    areas = complex_.areas[interior]
    total = areas.sum()
    m = np.maximum(3, np.rint(budget * areas / total).astype(np.int64)) if total > 0 else np.full(len(interior), 3)

    # fan triangles of the interior facets only
    offs = complex_.facet_offsets
    counts = offs[interior + 1] - offs[interior]
    sub_offsets = np.concatenate([[0], np.cumsum(counts)])
    idx = np.repeat(offs[interior] - sub_offsets[:-1], counts) + np.arange(sub_offsets[-1])
    loop = complex_.facet_vertices[idx]
    owner, c, a, b = _fan(complex_.vertices, sub_offsets, loop)
    tri_area = 0.5 * np.linalg.norm(np.cross(a - c, b - c), axis=1)
    cum = np.cumsum(tri_area)
    start = np.concatenate([[0.0], cum])[sub_offsets[:-1]]

    sample_owner = np.repeat(np.arange(len(interior)), m)
    r = rng.random((len(sample_owner), 3))
    target = start[sample_owner] + r[:, 0] * areas[sample_owner]
    t = np.searchsorted(cum, target, side="right")
    lo, hi = sub_offsets[sample_owner], sub_offsets[sample_owner + 1] - 1
    t = np.clip(t, lo, hi)
    # zero-area facets: pick triangles uniformly
    zero = areas[sample_owner] <= 0
    t[zero] = lo[zero] + np.minimum((r[zero, 0] * counts[sample_owner[zero]]).astype(np.int64), counts[sample_owner[zero]] - 1)
    s1, s2 = r[:, 1], r[:, 2]
    flip = s1 + s2 > 1
    s1[flip], s2[flip] = 1 - s1[flip], 1 - s2[flip]
    pos = c[t] + s1[:, None] * (a[t] - c[t]) + s2[:, None] * (b[t] - c[t])

    facets = interior[sample_owner]
    weights = areas[sample_owner] / m[sample_owner]
    fs = complex_.facet_sites[facets]
    return BisectorSamples(pos, weights, facets, fs[:, 0].copy(), fs[:, 1].copy())


@dataclass(frozen=True, eq=False)
class NeighborSets:
    offsets: np.ndarray
    indices: np.ndarray

    def __len__(self):
        return len(self.offsets) - 1

    def __getitem__(self, i):
        return self.indices[self.offsets[i]:self.offsets[i + 1]]

    def pairs(self):
        """(i, q) index arrays over all selected neighbors."""
        counts = np.diff(self.offsets)
        return np.repeat(np.arange(len(counts)), counts), self.indices


def two_means(points, center, max_iter=50):
    """Lloyd 2-means of ``points`` seeded at the members nearest to and
    farthest from ``center``.  Returns (labels, centroids, near_label)."""
    d = np.linalg.norm(points - center, axis=1)
    cents = np.stack([points[np.argmin(d)], points[np.argmax(d)]])
    labels = None
    for _ in range(max_iter):
        dist = np.linalg.norm(points[:, None, :] - cents[None], axis=2)
        new = np.argmin(dist, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for k in (0, 1):
            if np.any(labels == k):
                cents[k] = points[labels == k].mean(axis=0)
    near = int(np.argmin(np.linalg.norm(cents - center, axis=1)))
    return labels, cents, near


def neighbor_sets(complex_, cloud=None, seed=0, max_iter=50):
    """Per point, the nearer of two Lloyd clusters of its Voronoi-adjacent
    input sites.  Points with fewer than three such sites keep them all.

    ``seed`` is accepted for interface symmetry; initialization is
    deterministic.
    """
    n = complex_.n_points
    p = complex_.sites[:n]
    lists = []
    for i in range(n):
        nb = complex_.neighbors(i)
        lists.append(nb[nb < n])
    counts = np.array([len(nb) for nb in lists], dtype=np.int64)
    chosen = [None] * n
    for i in np.flatnonzero(counts < 3):
        chosen[i] = lists[i]

    # batched Lloyd over a padded table; rare high-degree sites run alone
    wide = (counts >= 3) & (counts > _PAD_WIDTH)
    for i in np.flatnonzero(wide):
        labels, _, near = two_means(p[lists[i]], p[i], max_iter)
        chosen[i] = lists[i][labels == near]
    rows = np.flatnonzero((counts >= 3) & ~wide)
    if len(rows):
        width = int(counts[rows].max())
        table = np.zeros((len(rows), width), np.int64)
        mask = np.arange(width)[None, :] < counts[rows][:, None]
        table[mask] = np.concatenate([lists[i] for i in rows])
        pc = p[rows]
        q = p[table]
        d = np.linalg.norm(q - pc[:, None, :], axis=2)
        r = np.arange(len(rows))
        cents = np.stack([q[r, np.argmin(np.where(mask, d, np.inf), axis=1)],
                          q[r, np.argmax(np.where(mask, d, -np.inf), axis=1)]], axis=1)
        labels = np.full(table.shape, -1)
        for _ in range(max_iter):
            dist = np.linalg.norm(q[:, :, None, :] - cents[:, None, :, :], axis=3)
            new = np.where(mask, np.argmin(dist, axis=2), -1)
            if np.array_equal(new, labels):
                break
            labels = new
            for k in (0, 1):
                sel = (labels == k)[..., None]
                cnt = sel.sum(axis=1)
                upd = (q * sel).sum(axis=1) / np.maximum(cnt, 1)
                cents[:, k] = np.where(cnt > 0, upd, cents[:, k])
        near = np.argmin(np.linalg.norm(cents - pc[:, None, :], axis=2), axis=1)
        keep = (labels == near[:, None]) & mask
        for k, i in enumerate(rows):
            chosen[i] = table[k][keep[k]]
    sizes = np.array([len(c) for c in chosen], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    indices = np.concatenate(chosen).astype(np.int64) if n else np.zeros(0, np.int64)
    return NeighborSets(offsets, indices)
