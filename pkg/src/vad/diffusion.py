"""Heat diffusion of bi-directional normals on the voxel grid and fusion of
the tensor and split-vector fields into a consistently signed unit field.

Tensor grids store six components in the order xx, yy, zz, xy, xz, yz.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import BiDirectionalField, PointCloud
from . import grid as G

log = logging.getLogger(__name__)

GAP_TOL = 1e-12
VEC_TOL = 1e-14
# the screened solve is accurate to about 1e-13 of the field norm; values
# further below the peak carry solver noise rather than signal
RELATIVE_TOL = 1e-9
# closed-form eigenvectors lose accuracy as gap/scale shrinks; below this the
# Jacobi sweep takes over
_JACOBI_SWITCH = 1e-5


@dataclass(frozen=True, eq=False)
class FusedField:
    y_t: G.VoxelGrid
    y_v: G.VoxelGrid
    y_f: G.VoxelGrid
    degenerate_mask: np.ndarray


def _arrays(cloud, normals):
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    vec = normals.vectors if isinstance(normals, BiDirectionalField) else np.asarray(normals, dtype=np.float64)
    return pts, vec


def _grid_from_spec(spec, components):
    if isinstance(spec, G.VoxelGrid):
        return G.like(spec, components)
    return G.make_grid(int(spec), components)


def outer6(n):
    """Rank-one tensors ``n n^T`` as (m, 6) rows."""
    x, y, z = n[:, 0], n[:, 1], n[:, 2]
    return np.stack([x * x, y * y, z * z, x * y, x * z, y * z], axis=1)


def diffuse_tensor(cloud, normals, grid_spec, t):
    """Splat ``n n^T`` at each point and diffuse every component."""
    pts, vec = _arrays(cloud, normals)
    g = _grid_from_spec(grid_spec, 6)
    src = G.splat(g, pts, outer6(vec))
    y, _ = G.solve_screened_poisson(src, t)
    return y


def diffuse_vector(cloud, normals, grid_spec, t, epsilon):
    """Splat ``+n`` at ``p + eps n`` and ``-n`` at ``p - eps n``, then
    diffuse every component."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    pts, vec = _arrays(cloud, normals)
    g = _grid_from_spec(grid_spec, 3)
    pos = np.vstack([pts + epsilon * vec, pts - epsilon * vec])
    val = np.vstack([vec, -vec])
    src = G.splat(g, pos, val)
    y, _ = G.solve_screened_poisson(src, t)
    return y


# symmetric 3x3 eigen-decomposition ------------------------------------------

def _full(t6):
    a = np.empty(t6.shape[:-1] + (3, 3))
    a[..., 0, 0], a[..., 1, 1], a[..., 2, 2] = t6[..., 0], t6[..., 1], t6[..., 2]
    a[..., 0, 1] = a[..., 1, 0] = t6[..., 3]
    a[..., 0, 2] = a[..., 2, 0] = t6[..., 4]
    a[..., 1, 2] = a[..., 2, 1] = t6[..., 5]
    return a


def _null_vector(m):
    """Unit vector spanning the (approximate) null space of rank-2 rows."""
    r0, r1, r2 = m[:, 0], m[:, 1], m[:, 2]
    cands = np.stack([np.cross(r0, r1), np.cross(r0, r2), np.cross(r1, r2)], axis=1)
    norms = np.linalg.norm(cands, axis=2)
    best = np.argmax(norms, axis=1)
    v = cands[np.arange(len(m)), best]
    nv = norms[np.arange(len(m)), best]
    return v / np.where(nv > 0, nv, 1.0)[:, None], nv


def jacobi_eigh(a, sweeps=50, tol=1e-15):
    """Cyclic Jacobi for a batch of symmetric 3x3 matrices.

    Returns eigenvalues in descending order and eigenvectors as columns.
    """
    a = np.array(a, dtype=np.float64).reshape(-1, 3, 3)
    m = len(a)
    v = np.tile(np.eye(3), (m, 1, 1))
    idx = np.arange(m)
    for _ in range(sweeps):
        off = a[:, 0, 1] ** 2 + a[:, 0, 2] ** 2 + a[:, 1, 2] ** 2
        scale = np.einsum("kii->k", a * a)
        if np.all(off <= tol * tol * np.maximum(scale, 1e-300)):
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = a[:, p, q]
            rot = np.abs(apq) > 0
            # tiny apq overflows theta to inf, which correctly gives t = 0
            with np.errstate(over="ignore", divide="ignore"):
                theta = np.where(rot, (a[:, q, q] - a[:, p, p]) / (2 * np.where(rot, apq, 1.0)), 0.0)
                t = np.where(rot, np.sign(theta + (theta == 0)) / (np.abs(theta) + np.sqrt(theta * theta + 1)), 0.0)
            c = 1 / np.sqrt(t * t + 1)
            s = t * c
            j = np.zeros((m, 3, 3))
            j[:, 0, 0] = j[:, 1, 1] = j[:, 2, 2] = 1.0
            j[idx, p, p] = c
            j[idx, q, q] = c
            j[idx, p, q] = s
            j[idx, q, p] = -s
            a = np.einsum("kji,kjl,klm->kim", j, a, j)
            v = np.einsum("kij,kjl->kil", v, j)
    w = np.einsum("kii->ki", a)
    order = np.argsort(-w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    return w, v


def eigh3(t6):
    """Eigen-decomposition of symmetric 3x3 tensors given as (m, 6) rows.

    Closed form (trigonometric solution of the characteristic polynomial,
    eigenvectors from cross products of the shifted rows); nodes whose
    relative eigengap is too small for the closed form fall back to Jacobi.
    Returns eigenvalues (m, 3) in descending order and eigenvectors (m, 3, 3)
    as columns.
    """
    t6 = np.asarray(t6, dtype=np.float64).reshape(-1, 6)
    # scale each tensor to unit max entry so squares neither under- nor overflow
    mag = np.abs(t6).max(axis=1)
    mag = np.where(mag > 0, mag, 1.0)
    t6 = t6 / mag[:, None]
    m = len(t6)
    a = _full(t6)
    q = (t6[:, 0] + t6[:, 1] + t6[:, 2]) / 3
    p1 = t6[:, 3] ** 2 + t6[:, 4] ** 2 + t6[:, 5] ** 2
    p2 = (t6[:, 0] - q) ** 2 + (t6[:, 1] - q) ** 2 + (t6[:, 2] - q) ** 2 + 2 * p1
    p = np.sqrt(p2 / 6)
    safe = np.where(p > 0, p, 1.0)
    b = (a - q[:, None, None] * np.eye(3)) / safe[:, None, None]
    r = np.clip(np.linalg.det(b) / 2, -1.0, 1.0)
    phi = np.arccos(r) / 3
    l1 = q + 2 * p * np.cos(phi)
    l3 = q + 2 * p * np.cos(phi + 2 * np.pi / 3)
    l2 = 3 * q - l1 - l3
    w = np.stack([l1, l2, l3], axis=1)

    e1, _ = _null_vector(a - l1[:, None, None] * np.eye(3))
    e3, _ = _null_vector(a - l3[:, None, None] * np.eye(3))
    # make e3 exactly orthogonal to e1 before completing the frame
    e3 = e3 - np.einsum("ij,ij->i", e3, e1)[:, None] * e1
    n3 = np.linalg.norm(e3, axis=1)
    e3 = e3 / np.where(n3 > 0, n3, 1.0)[:, None]
    e2 = np.cross(e3, e1)
    v = np.stack([e1, e2, e3], axis=2)

    scale = np.maximum(np.abs(w).max(axis=1), 1e-300)
    gap = np.minimum(l1 - l2, l2 - l3)
    bad = (p == 0) | (gap < _JACOBI_SWITCH * scale) | (n3 < 0.5)
    if bad.any():
        wj, vj = jacobi_eigh(a[bad])
        w[bad] = wj
        v[bad] = vj
    return w * mag[:, None], v


def principal_axis(t6):
    """Largest eigenvalue, eigengap and unit principal eigenvector."""
    w, v = eigh3(t6)
    return w[:, 0], w[:, 0] - w[:, 1], v[:, :, 0]


# fusion ---------------------------------------------------------------------

def fuse(y_t, y_v):
    """Orient the principal axis of ``y_t`` by the sign of ``y_v``.

    A node is degenerate when its eigengap or ``||y_v||`` is below an
    absolute floor or below ``RELATIVE_TOL`` times the grid maximum; those
    nodes copy ``y_f`` from the nearest non-degenerate node (exact Euclidean
    nearest on the lattice).
    """
    if y_t.dims != y_v.dims:
        raise ValueError("tensor and vector grids differ in shape")
    t6 = y_t.flat()
    yv = y_v.flat()
    _, gap, axis = principal_axis(t6)
    vnorm = np.linalg.norm(yv, axis=1)
    gap_tol = max(GAP_TOL, RELATIVE_TOL * float(gap.max(initial=0.0)))
    vec_tol = max(VEC_TOL, RELATIVE_TOL * float(vnorm.max(initial=0.0)))
    degenerate = (gap < gap_tol) | (vnorm < vec_tol)
    flip = np.einsum("ij,ij->i", axis, yv) < 0
    yf = np.where(flip[:, None], -axis, axis)
    if degenerate.all():
        log.warning("fusion is degenerate at every node; y_f is zero")
        yf[:] = 0.0
    elif degenerate.any():
        mask3 = degenerate.reshape(y_t.dims, order="F")
        _, inds = ndimage.distance_transform_edt(mask3, return_indices=True)
        src = np.ravel_multi_index(tuple(inds), y_t.dims, order="F").ravel(order="F")
        yf = yf[src]
    return FusedField(y_t, y_v, y_t.with_flat(yf), degenerate.reshape(y_t.dims, order="F"))


def diffuse_and_fuse(cloud, normals, grid_spec, t, epsilon):
    """Both diffusions followed by fusion."""
    y_t = diffuse_tensor(cloud, normals, grid_spec, t)
    y_v = diffuse_vector(cloud, normals, y_t, t, epsilon)
    return fuse(y_t, y_v)
