"""Evaluation oracles: normal consistency, Chamfer/Hausdorff distances,
exact distance to clouds and meshes, mesh sampling, and the weight
ablation sweep."""

from __future__ import annotations

import csv
import logging
from dataclasses import replace

import numpy as np
from scipy.spatial import cKDTree

from .core import BiDirectionalField, Config, PointCloud, VadError, min_pairwise_distance
from .io import ParseError, TriangleMesh
from .optimize import build_structures, optimize_normals

log = logging.getLogger(__name__)

# (lambda_a, lambda_d, lambda_g)
DEFAULT_COMBOS = (
    (1.0, 1e3, 1e-2),
    (1.0, 1e3, 1e-1),
    (1.0, 1e3, 1e-3),
    (1.0, 1e4, 1e-2),
    (1.0, 1e2, 1e-2),
    (10.0, 1e3, 1e-2),
    (0.1, 1e3, 1e-2),
)

DENSITY_RATIO = 25.0


class LengthMismatch(VadError):
    pass


class EmptyInput(VadError):
    pass


class EmptyMesh(VadError):
    pass


def _vectors(v):
    if isinstance(v, BiDirectionalField):
        return v.vectors
    return np.asarray(v, dtype=np.float64).reshape(-1, 3)


def normal_consistency(normals, gt_normals):
    """Mean, median and min of ``|n . n*|`` (sign-blind)."""
    a, b = _vectors(normals), _vectors(gt_normals)
    if len(a) != len(b):
        raise LengthMismatch(f"{len(a)} normals vs {len(b)} references")
    a = a / np.linalg.norm(a, axis=1, keepdims=True)
    b = b / np.linalg.norm(b, axis=1, keepdims=True)
    c = np.clip(np.abs(np.einsum("ij,ij->i", a, b)), 0.0, 1.0)
    return {"mean": float(c.mean()), "median": float(np.median(c)), "min": float(c.min()), "per_point": c}


def chamfer_hausdorff(a, b):
    """Symmetric mean (Chamfer) and max (Hausdorff) nearest distances,
    both multiplied by 1000."""
    a = a.points if isinstance(a, PointCloud) else np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = b.points if isinstance(b, PointCloud) else np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise EmptyInput("Chamfer distance needs two nonempty sets")
    dab, _ = cKDTree(b).query(a)
    dba, _ = cKDTree(a).query(b)
    cd = 0.5 * (dab.mean() + dba.mean())
    hd = max(dab.max(), dba.max())
    return 1e3 * float(cd), 1e3 * float(hd)


def closest_point_on_triangles(x, a, b, c):
    """Closest points on triangles ``(a, b, c)`` to ``x`` (all broadcast to
    (..., 3)), by Voronoi-region classification of the query."""
    x, a, b, c = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (x, a, b, c)))
    ab, ac, ap = b - a, c - a, x - a
    d1 = np.einsum("...i,...i->...", ab, ap)
    d2 = np.einsum("...i,...i->...", ac, ap)
    bp = x - b
    d3 = np.einsum("...i,...i->...", ab, bp)
    d4 = np.einsum("...i,...i->...", ac, bp)
    cp = x - c
    d5 = np.einsum("...i,...i->...", ab, cp)
    d6 = np.einsum("...i,...i->...", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    denom = va + vb + vc
    safe = np.where(denom != 0, denom, 1.0)
    v = vb / safe
    w = vc / safe
    out = a + v[..., None] * ab + w[..., None] * ac  # interior of the face

    def put(mask, value):
        nonlocal out
        out = np.where(mask[..., None], value, out)

    # later assignments take precedence: A, B, AB, C, AC, BC, face
    with np.errstate(divide="ignore", invalid="ignore"):
        e_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        t_bc = (d4 - d3) / np.where((d4 - d3) + (d5 - d6) != 0, (d4 - d3) + (d5 - d6), 1.0)
        put(e_bc, b + t_bc[..., None] * (c - b))
        e_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t_ac = d2 / np.where(d2 - d6 != 0, d2 - d6, 1.0)
        put(e_ac, a + t_ac[..., None] * ac)
        put((d6 >= 0) & (d5 <= d6), c)
        e_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t_ab = d1 / np.where(d1 - d3 != 0, d1 - d3, 1.0)
        put(e_ab, a + t_ab[..., None] * ab)
    put((d3 >= 0) & (d4 <= d3), b)
    put((d1 <= 0) & (d2 <= 0), a)
    return out


def point_triangle_distance(x, a, b, c):
    return np.linalg.norm(np.asarray(x) - closest_point_on_triangles(x, a, b, c), axis=-1)


def closest_triangle(mesh, x, chunk=2048):
    """Index of the nearest triangle and the exact distance for each row of
    ``x`` (brute force over all triangles, in memory-bounded chunks)."""
    tri = mesh.vertices[mesh.triangles]
    q = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    dist = np.full(len(q), np.inf)
    which = np.zeros(len(q), np.int64)
    step = max(1, chunk * 64 // max(len(tri), 1))
    for s in range(0, len(q), step):
        d = point_triangle_distance(q[s:s + step, None, :], tri[None, :, 0], tri[None, :, 1], tri[None, :, 2])
        which[s:s + step] = np.argmin(d, axis=1)
        dist[s:s + step] = d[np.arange(len(d)), which[s:s + step]]
    return which, dist


def udf_oracle(target, x):
    """Exact unsigned distance from ``x`` (3,) or (m, 3) to a point cloud or
    triangle mesh."""
    x = np.asarray(x, dtype=np.float64)
    q = x.reshape(-1, 3)
    if isinstance(target, TriangleMesh):
        if len(target.triangles) == 0:
            raise EmptyInput("mesh has no triangles")
        _, out = closest_triangle(target, q)
    else:
        pts = target.points if isinstance(target, PointCloud) else np.asarray(target, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            raise EmptyInput("point set is empty")
        out, _ = cKDTree(pts).query(q)
    return float(out[0]) if x.ndim == 1 else out


def triangle_normals(mesh):
    v = mesh.vertices[mesh.triangles]
    n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def sample_mesh(mesh, count, seed=0, mode="uniform", noise_sigma=0.0):
    """Area-weighted random samples on a triangle mesh.

    ``density_gradient`` thins samples with an acceptance ramp along x that
    falls from 1 to 1/25.  ``noise_sigma`` is relative to the bounding-box
    diagonal.  Reference normals are the (sign-arbitrary) face normals.
    """
    if mode not in ("uniform", "density_gradient"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    areas = mesh.triangle_areas() if len(mesh.triangles) else np.zeros(0)
    total = float(areas.sum())
    if total <= 0:
        raise EmptyMesh("mesh has no area")
    rng = np.random.default_rng(seed)
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    fnorm = triangle_normals(mesh)
    pts, nrm = [], []
    have = 0
    while have < count:
        m = max(count - have, 16) * (2 if mode == "uniform" else 2 * int(DENSITY_RATIO))
        tri = rng.choice(len(areas), size=m, p=areas / total)
        r1, r2 = rng.random(m), rng.random(m)
        s = np.sqrt(r1)
        bary = np.stack([1 - s, s * (1 - r2), s * r2], axis=1)
        v = mesh.vertices[mesh.triangles[tri]]
        p = np.einsum("mk,mkd->md", bary, v)
        if mode == "density_gradient":
            ramp = (p[:, 0] - lo[0]) / max(hi[0] - lo[0], 1e-300)
            accept = rng.random(m) < 1.0 - (1.0 - 1.0 / DENSITY_RATIO) * ramp
            p, tri = p[accept], tri[accept]
        pts.append(p)
        nrm.append(fnorm[tri])
        have += len(p)
    pts = np.concatenate(pts)[:count]
    nrm = np.concatenate(nrm)[:count]
    if noise_sigma > 0:
        pts = pts + rng.normal(scale=noise_sigma * float(np.linalg.norm(hi - lo)), size=pts.shape)
    return PointCloud(pts, nrm)


def ablation_sweep(cloud, combos=DEFAULT_COMBOS, config=None, seed=0, structures=None):
    """Mean ``|cos|`` against reference normals for each ``(lambda_a,
    lambda_d, lambda_g)`` combination, sharing one Voronoi complex, one set
    of bisector samples and one set of neighbor sets."""
    if cloud.gt_normals is None:
        raise ValueError("ablation needs reference normals")
    config = (config or Config()).resolved(min_pairwise_distance(cloud), len(cloud))
    if structures is None:
        cx, samples, nbrs, _ = build_structures(cloud, config, seed)
    else:
        cx, samples, nbrs = structures
    rows = []
    for la, ld, lg in combos:
        cfg = replace(config, lambda_a=la, lambda_d=ld, lambda_g=lg)
        normals, trace = optimize_normals(cloud, cx, samples, nbrs, None, cfg, seed)
        score = normal_consistency(normals, cloud.gt_normals)["mean"]
        log.info("combo a=%g d=%g g=%g -> %.4f", la, ld, lg, score)
        rows.append({"lambda_a": la, "lambda_d": ld, "lambda_g": lg, "mean_cos": score})
    return rows


def write_ablation_csv(path, rows):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["lambda_a", "lambda_d", "lambda_g", "mean_cos"])
        for r in rows:
            out.writerow([repr(r["lambda_a"]), repr(r["lambda_d"]), repr(r["lambda_g"]), repr(r["mean_cos"])])


def read_combos(path):
    """Combos file: one ``lambda_a,lambda_d,lambda_g`` triple per line (a
    header line with those names is allowed)."""
    combos = []
    with open(path) as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            row = [c.strip() for c in row if c.strip()]
            if not row or row[0].startswith("#") or row[0] == "lambda_a":
                continue
            if len(row) != 3:
                raise ParseError(f"{path}:{lineno}: expected lambda_a,lambda_d,lambda_g")
            combos.append(tuple(float(c) for c in row))
    return combos


def spread(rows):
    vals = [r["mean_cos"] for r in rows]
    return max(vals) - min(vals)
