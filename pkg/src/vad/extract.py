"""Iso-surface extraction by marching cubes, plus small mesh topology
helpers (Euler characteristic, connected components, boundary edges)."""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from skimage import measure

from .core import VadError
from .io import TriangleMesh


_LEVEL_NUDGE = 1e-9


class IsoOutOfRange(VadError):
    pass


class DegenerateIso(VadError):
    pass


def marching_cubes(grid, iso, signed=False):
    """Triangle mesh of ``{x : grid(x) = iso}`` in grid coordinates.

    ``signed=False`` marks an unsigned field, for which iso 0 is the
    degenerate double-cover zero set and is refused.  Triangles wind so that
    their normals point toward increasing values (outward for a signed field
    that is negative inside).
    """
    data = np.asarray(grid.data, dtype=np.float64)
    if data.ndim != 3:
        raise ValueError("marching cubes needs a scalar grid")
    if not signed and iso <= 0:
        raise DegenerateIso("iso 0 on an unsigned field has no sign change; use a positive offset")
    lo, hi = float(data.min()), float(data.max())
    if not lo < iso < hi:
        raise IsoOutOfRange(f"iso {iso} outside the open value range ({lo}, {hi})")
    # nodes exactly at the level (pinned zeros) would give zero-area,
    # non-manifold fans; push each to the side its 6 neighbors lean to
    at_level = data == iso
    if at_level.any():
        kernel = np.zeros((3, 3, 3))
        kernel[1, 1, [0, 2]] = kernel[1, [0, 2], 1] = kernel[[0, 2], 1, 1] = 1.0
        lean = ndimage.convolve(data - iso, kernel, mode="nearest")
        side = np.where(lean < 0, -1.0, 1.0)
        data = np.where(at_level, iso + side * _LEVEL_NUDGE * (hi - lo), data)
    verts, faces, _, _ = measure.marching_cubes(
        data, level=iso, spacing=(grid.spacing,) * 3, gradient_direction="descent",
        method="lewiner", allow_degenerate=True)
    verts = verts.astype(np.float64) + grid.origin
    return TriangleMesh(verts, faces.astype(np.int64))


def edges(mesh):
    """Unique undirected edges and how many triangles use each."""
    t = mesh.triangles
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    e.sort(axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq, counts


def euler_characteristic(mesh):
    used = np.unique(mesh.triangles)
    e, _ = edges(mesh)
    return int(len(used) - len(e) + len(mesh.triangles))


def is_closed(mesh):
    """Every edge borders exactly two triangles."""
    _, counts = edges(mesh)
    return bool(len(counts) and np.all(counts == 2))


def components(mesh):
    """Label per vertex and the number of triangle-connected components."""
    e, _ = edges(mesh)
    n = len(mesh.vertices)
    adj = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    count, labels = connected_components(adj, directed=False)
    used = np.unique(mesh.triangles)
    # isolated vertices (unused by any triangle) do not count as components
    return labels, int(len(np.unique(labels[used])))


def split_components(mesh):
    """List of sub-meshes, one per connected component."""
    labels, _ = components(mesh)
    out = []
    tri_label = labels[mesh.triangles[:, 0]]
    for lab in np.unique(tri_label):
        tris = mesh.triangles[tri_label == lab]
        used, inv = np.unique(tris, return_inverse=True)
        out.append(TriangleMesh(mesh.vertices[used], inv.reshape(-1, 3)))
    return out


def signed_volume(mesh):
    v = mesh.vertices[mesh.triangles]
    return float(np.sum(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2]))) / 6.0)
