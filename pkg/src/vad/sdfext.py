"""Global orientation by inside/outside label propagation over Voronoi
vertices, seeded at an auxiliary corner, and a signed distance field from
the oriented normals."""

from __future__ import annotations

import logging
from collections import deque

import numpy as np
from scipy import ndimage

from .core import BiDirectionalField, PointCloud, VadError
from . import grid as G
from .diffusion import RELATIVE_TOL, VEC_TOL
from .udf import UdfResult, zero_set_nodes

log = logging.getLogger(__name__)

OUTSIDE = 1
INSIDE = -1
UNKNOWN = 0


class PropagationStalled(VadError):
    pass


def orient_globally(cloud, normals, complex_):
    """Assign a sign to every bi-directional normal so that it points from
    inside-labeled toward outside-labeled Voronoi vertices.

    Returns ``(oriented normals (n, 3), vertex labels)``.  Raises
    :class:`PropagationStalled` when a point is never reached or a vertex of
    an auxiliary cell ends up inside, both symptoms of a surface that does
    not separate space.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    vec = normals.vectors if isinstance(normals, BiDirectionalField) else np.asarray(normals, dtype=np.float64)
    vec = vec / np.linalg.norm(vec, axis=1, keepdims=True)
    n = complex_.n_points
    if len(pts) != n:
        raise ValueError("cloud and complex disagree on the point count")
    tets = complex_.tets
    verts = complex_.vertices
    offsets, tet_ids = complex_.site_tets()
    labels = np.zeros(len(tets), np.int8)
    sign = np.zeros(n, np.int8)

    def cell(i):
        return tet_ids[offsets[i]:offsets[i + 1]]

    queue = deque()
    queued = np.zeros(n, bool)

    def touch(tet_list):
        for s in np.unique(tets[tet_list]):
            if s < n and sign[s] == 0 and not queued[s]:
                queued[s] = True
                queue.append(s)

    seed = cell(n)
    labels[seed] = OUTSIDE
    touch(seed)
    while queue:
        i = queue.popleft()
        queued[i] = False
        c = cell(i)
        lab = labels[c]
        known = lab != UNKNOWN
        if not known.any():
            continue
        # distance-weighted vote: each labeled vertex pulls by its signed
        # offset from the tangent plane
        side = (verts[c[known]] - pts[i]) @ vec[i]
        score = float(np.sum(lab[known] * side))
        if score == 0.0:
            continue
        sign[i] = 1 if score > 0 else -1
        n_i = sign[i] * vec[i]
        fresh = c[~known]
        if fresh.size:
            labels[fresh] = np.where((verts[fresh] - pts[i]) @ n_i > 0, OUTSIDE, INSIDE)
            touch(fresh)
    missing = np.flatnonzero(sign == 0)
    if missing.size:
        raise PropagationStalled(
            f"{missing.size} points were never oriented; signed mode needs a watertight surface")
    aux_cells = np.concatenate([cell(k) for k in range(n, len(complex_.sites))])
    if np.any(labels[aux_cells] == INSIDE):
        raise PropagationStalled(
            "the outside region reaches the inside labels; signed mode needs a watertight surface")
    return sign[:, None] * vec, labels


def compute_sdf(cloud, oriented_normals, config, grid_spec=None):
    """Signed field from oriented normals: diffuse ``+n`` splatted at the
    points, normalize, and integrate with the UDF zero set.  Negative
    inside."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    vec = np.asarray(oriented_normals, dtype=np.float64)
    if config.diffusion_time_t is None:
        raise ValueError("config must be resolved (diffusion time unset)")
    g = G.like(grid_spec, 3) if isinstance(grid_spec, G.VoxelGrid) else G.make_grid(
        int(grid_spec or config.grid_resolution), 3)
    src = G.splat(g, pts, vec)
    y, _ = G.solve_screened_poisson(src, config.diffusion_time_t)
    flat = y.flat()
    norm = np.linalg.norm(flat, axis=1)
    degenerate = norm < max(VEC_TOL, RELATIVE_TOL * float(norm.max(initial=0.0)))
    yf = flat / np.where(degenerate, 1.0, norm)[:, None]
    if degenerate.all():
        raise VadError("diffused normal field vanishes everywhere")
    if degenerate.any():
        _, inds = ndimage.distance_transform_edt(degenerate.reshape(g.dims, order="F"), return_indices=True)
        yf = yf[np.ravel_multi_index(tuple(inds), g.dims, order="F").ravel(order="F")]
    yfg = y.with_flat(yf)
    zs = zero_set_nodes(yfg, pts)
    u, info = G.solve_poisson_dirichlet(G.divergence(yfg), zs, boundary_field=yfg)
    return UdfResult(u, yfg, zs, {"cg_residual": info.residual, "cg_iterations": info.iterations})
