"""Uniform voxel grids over [-0.5, 0.5]^3, trilinear splatting/sampling, the
7-point Laplacian with mirrored-ghost Neumann boundary, and conjugate
gradient solvers for the screened Poisson and pinned Poisson systems.

Arrays are indexed ``data[i, j, k]`` with ``i`` along x; flattening uses
Fortran order so x varies fastest.

The mirrored-ghost Laplacian ``L`` is not a symmetric matrix: a boundary row
carries twice the weight on its inner neighbor.  It factors as
``L = -W^{-1} K / s^2`` with ``W`` the diagonal of dual-cell volume
fractions (1/2 per boundary axis) and ``K`` the lattice Laplacian whose edge
weights are the matching dual-face area fractions, so every system is
solved in the symmetric form obtained by multiplying with ``W``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import VadError

log = logging.getLogger(__name__)

DOMAIN_LO = -0.5
DOMAIN_HI = 0.5


class OutOfDomain(VadError):
    pass


class SolverDiverged(VadError):
    pass


class EmptyZeroSet(VadError):
    pass


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Node-centred grid; ``data`` has shape ``dims`` or ``dims + (c,)``."""

    data: np.ndarray
    origin: np.ndarray
    spacing: float

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))
        if min(self.data.shape[:3]) < 2:
            raise ValueError("grid needs at least 2 nodes per axis")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")

    @property
    def dims(self):
        return tuple(self.data.shape[:3])

    @property
    def n_nodes(self):
        return int(np.prod(self.dims))

    def node_positions(self):
        """(n_nodes, 3) node coordinates in flattened (x-fastest) order."""
        axes = [self.origin[a] + self.spacing * np.arange(self.dims[a]) for a in range(3)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx.ravel(order="F"), gy.ravel(order="F"), gz.ravel(order="F")], axis=1)

    def flat(self):
        """Node values as (n_nodes,) or (n_nodes, c), x fastest."""
        if self.data.ndim == 3:
            return self.data.ravel(order="F")
        return self.data.reshape(self.n_nodes, -1, order="F")

    def with_flat(self, values):
        values = np.asarray(values)
        shape = self.dims if values.ndim == 1 else self.dims + (values.shape[1],)
        return VoxelGrid(values.reshape(shape, order="F"), self.origin, self.spacing)


def make_grid(resolution, components=None):
    """Zero grid with ``resolution`` nodes per axis spanning [-0.5, 0.5]^3."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    shape = (resolution,) * 3 + (() if components is None else (components,))
    return VoxelGrid(np.zeros(shape), np.full(3, DOMAIN_LO), (DOMAIN_HI - DOMAIN_LO) / (resolution - 1))


def like(grid, components=None):
    shape = grid.dims + (() if components is None else (components,))
    return VoxelGrid(np.zeros(shape), grid.origin, grid.spacing)


def _cell_coords(grid, x):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    u = (x - grid.origin) / grid.spacing
    dims = np.array(grid.dims)
    tol = 1e-9
    if np.any(u < -tol) or np.any(u > dims - 1 + tol):
        raise OutOfDomain("position outside the grid")
    u = np.clip(u, 0.0, dims - 1)
    base = np.minimum(np.floor(u).astype(np.int64), dims - 2)
    frac = u - base
    return base, frac


def trilinear_weights(grid, x):
    """Flat node indices (m, 8) and weights (m, 8) of the trilinear stencil."""
    base, frac = _cell_coords(grid, x)
    nx, ny, _ = grid.dims
    idx = np.empty((len(base), 8), np.int64)
    w = np.empty((len(base), 8))
    k = 0
    for dz in (0, 1):
        for dy in (0, 1):
            for dx in (0, 1):
                d = np.array([dx, dy, dz])
                node = base + d
                idx[:, k] = node[:, 0] + nx * (node[:, 1] + ny * node[:, 2])
                w[:, k] = np.prod(np.where(d == 1, frac, 1.0 - frac), axis=1)
                k += 1
    return idx, w


def splat(grid, positions, values):
    """Add trilinearly weighted values into a copy of ``grid``."""
    values = np.asarray(values, dtype=np.float64)
    idx, w = trilinear_weights(grid, positions)
    flat = grid.flat().astype(np.float64, copy=True)
    n = grid.n_nodes
    if flat.ndim == 1:
        flat += np.bincount(idx.ravel(), (w * values.reshape(-1, 1)).ravel(), n)
    else:
        vals = values.reshape(len(idx), -1)
        for c in range(flat.shape[1]):
            flat[:, c] += np.bincount(idx.ravel(), (w * vals[:, c:c + 1]).ravel(), n)
    return grid.with_flat(flat)


def sample(grid, x):
    """Trilinear interpolation of grid values at ``x`` (m, 3)."""
    idx, w = trilinear_weights(grid, x)
    flat = grid.flat()
    if flat.ndim == 1:
        return np.sum(flat[idx] * w, axis=1)
    return np.einsum("mk,mkc->mc", w, flat[idx])


# operators ------------------------------------------------------------------

def _path_laplacian(n):
    main = np.full(n, 2.0)
    main[[0, -1]] = 1.0
    off = -np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def _boundary_weights(n):
    w = np.ones(n)
    w[[0, -1]] = 0.5
    return w


def graph_laplacian(dims):
    """Symmetric PSD lattice Laplacian ``K`` (x-fastest ordering): each edge
    is weighted by the area fraction of its dual face, which is halved for
    every transverse axis on which the edge lies on the boundary."""
    nx, ny, nz = dims
    wx, wy, wz = (sp.diags(_boundary_weights(n)) for n in dims)
    k = (sp.kron(wz, sp.kron(wy, _path_laplacian(nx)))
         + sp.kron(wz, sp.kron(_path_laplacian(ny), wx))
         + sp.kron(_path_laplacian(nz), sp.kron(wy, wx)))
    return k.tocsr()


def volume_weights(dims):
    """Dual-cell volume fraction per node (x-fastest)."""
    nx, ny, nz = dims
    return np.kron(_boundary_weights(nz), np.kron(_boundary_weights(ny), _boundary_weights(nx)))


def laplacian(grid):
    """Apply the mirrored-ghost Neumann Laplacian to every component."""
    k = graph_laplacian(grid.dims)
    w = volume_weights(grid.dims)
    flat = grid.flat()
    out = -(k @ flat) / grid.spacing ** 2
    out = out / (w if flat.ndim == 1 else w[:, None])
    return grid.with_flat(out)


def divergence(grid):
    """Divergence of a vector grid: central differences inside, one-sided on
    the boundary, divided by the spacing."""
    data = grid.data
    if data.ndim != 4 or data.shape[3] != 3:
        raise ValueError("divergence needs a 3-vector grid")
    out = np.zeros(grid.dims)
    for a in range(3):
        out += np.gradient(data[..., a], grid.spacing, axis=a, edge_order=1)
    return VoxelGrid(out, grid.origin, grid.spacing)


def boundary_flux(grid):
    """Outward normal component ``Y . n_out`` on boundary nodes, summed over
    the boundary axes a node belongs to (zero in the interior)."""
    data = grid.data
    out = np.zeros(grid.dims)
    for a in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[a], hi[a] = 0, -1
        out[tuple(lo)] -= data[tuple(lo) + (a,)]
        out[tuple(hi)] += data[tuple(hi) + (a,)]
    return VoxelGrid(out, grid.origin, grid.spacing)


# conjugate gradient ---------------------------------------------------------

@dataclass
class CgInfo:
    iterations: int
    residual: float
    history: list = field(default_factory=list)


def conjugate_gradient(matvec, b, x0=None, tol=1e-8, maxiter=None, precond=None, record=False):
    """Conjugate gradient on ``A x = b`` for SPD ``A``; ``b`` may hold several
    independent right-hand sides as columns, each with its own step sizes.

    Stops when every column has ``||r|| <= tol * ||b||``.  Raises
    :class:`SolverDiverged` if the iteration cap is reached without the
    residual dropping below its starting value.
    """
    b = np.asarray(b, dtype=np.float64)
    single = b.ndim == 1
    B = b[:, None] if single else b
    n, m = B.shape
    maxiter = maxiter or 10 * n
    X = np.zeros_like(B) if x0 is None else np.array(x0, dtype=np.float64).reshape(n, m)
    R = B - _mv(matvec, X) if x0 is not None else B.copy()
    Z = R * precond[:, None] if precond is not None else R
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    bnorm = np.linalg.norm(B, axis=0)
    target = tol * np.where(bnorm > 0, bnorm, 1.0)
    rnorm = np.linalg.norm(R, axis=0)
    start = rnorm.copy()
    history = [float(np.max(rnorm / np.where(bnorm > 0, bnorm, 1.0)))] if record else []
    active = rnorm > target
    it = 0
    while active.any() and it < maxiter:
        it += 1
        AP = _mv(matvec, P)
        pap = np.einsum("ij,ij->j", P, AP)
        ok = active & (pap > 0)
        alpha = np.where(ok, rz / np.where(pap > 0, pap, 1.0), 0.0)
        X += alpha * P
        R -= alpha * AP
        Z = R * precond[:, None] if precond is not None else R
        rz_new = np.einsum("ij,ij->j", R, Z)
        beta = np.where(ok, rz_new / np.where(rz > 0, rz, 1.0), 0.0)
        P = Z + beta * P
        rz = rz_new
        rnorm = np.linalg.norm(R, axis=0)
        active = ok & (rnorm > target)
        if record:
            history.append(float(np.max(rnorm / np.where(bnorm > 0, bnorm, 1.0))))
    rel = float(np.max(rnorm / np.where(bnorm > 0, bnorm, 1.0)))
    if np.any(rnorm > target) and np.any(rnorm >= start) and np.any(start > 0):
        raise SolverDiverged(f"CG did not reduce the residual (relative {rel:.3e} after {it} iterations)")
    if np.any(rnorm > target):
        log.warning("CG stopped at iteration cap %d with relative residual %.3e", it, rel)
    info = CgInfo(it, rel, history)
    return (X[:, 0] if single else X), info


def _mv(matvec, X):
    out = matvec(X)
    return out.reshape(X.shape)


def _iteration_cap(dims):
    # 10 * n^(1/3) * 10 with n the node count
    return int(100 * round(np.prod(dims) ** (1.0 / 3.0)))


# solvers --------------------------------------------------------------------

SCREENED_TOL = 1e-13


def solve_screened_poisson(source, t, tol=SCREENED_TOL, record=False):
    """Solve ``(Lap - 1/t) Y = -source / t`` per component.

    Returns ``(grid, CgInfo)``.  The default tolerance is far tighter than
    needed for a well-posed solve because downstream fusion reads the signs
    of values many orders of magnitude below the peak; the screened operator
    is so well conditioned that this costs only a few extra iterations.
    """
    if t <= 0:
        raise ValueError("diffusion time must be positive")
    flat = source.flat()
    if not np.all(np.isfinite(flat)):
        raise ValueError("source must be finite")
    dims = source.dims
    k = graph_laplacian(dims)
    w = volume_weights(dims)
    c = source.spacing ** 2 / t
    A = (k + sp.diags(c * w)).tocsr()
    rhs = c * (w[:, None] * (flat if flat.ndim == 2 else flat[:, None]))
    precond = 1.0 / A.diagonal() if max(dims) > 128 else None
    x, info = conjugate_gradient(lambda v: A @ v, rhs, tol=tol, maxiter=_iteration_cap(dims),
                                 precond=precond, record=record)
    if flat.ndim == 1:
        x = x[:, 0]
    return source.with_flat(x), info


def pinned_mask(dims, zero_set):
    mask = np.zeros(int(np.prod(dims)), bool)
    mask[np.asarray(zero_set, dtype=np.int64)] = True
    return mask


def solve_poisson_dirichlet(div, zero_set, boundary_field=None, tol=1e-8, x0=None, record=False):
    """Solve ``Lap u = div`` with ``u = 0`` on ``zero_set`` nodes.

    The outer boundary uses mirrored ghosts.  Without ``boundary_field`` the
    Neumann data is homogeneous; with it the ghost values carry the normal
    derivative ``Y . n_out`` of that vector grid, the natural boundary
    condition of ``min ||grad u - Y||^2`` whose Euler-Lagrange equation is
    the Poisson problem.  Returns ``(grid, CgInfo)``.
    """
    dims = div.dims
    zero_set = np.unique(np.asarray(zero_set, dtype=np.int64))
    if zero_set.size == 0:
        raise EmptyZeroSet("at least one pinned node is required")
    rhs_full = div.flat().astype(np.float64)
    if boundary_field is not None:
        rhs_full = rhs_full - 2.0 / div.spacing * boundary_flux(boundary_field).flat()
    k = graph_laplacian(dims)
    w = volume_weights(dims)
    # Lap u = f  <=>  K u = -s^2 W f
    b = -div.spacing ** 2 * w * rhs_full
    free = ~pinned_mask(dims, zero_set)
    A = k[free][:, free].tocsr()
    precond = 1.0 / A.diagonal() if max(dims) > 128 else None
    guess = None if x0 is None else np.asarray(x0, dtype=np.float64).ravel(order="F")[free]
    uf, info = conjugate_gradient(lambda v: A @ v, b[free], x0=guess, tol=tol,
                                  maxiter=_iteration_cap(dims) * 4, precond=precond, record=record)
    u = np.zeros(div.n_nodes)
    u[free] = uf
    return div.with_flat(u), info
