"""Bisector energies, the alignment regularizer and the displacement
regularizer, each with its analytic gradient.

Normals are taken as given (callers keep them unit length); the projection
distance at a bisector sample ``x`` for site ``i`` is ``|(x - p_i) . n_i|``.
At ``|.|`` kinks the subgradient is 0 and ``sign(0)`` is +1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import PointCloud


@dataclass
class EnergyBreakdown:
    e_d: float
    e_g: float
    e_align: float
    e_reg: float
    total: float
    grad_normals: Optional[np.ndarray] = None
    grad_offsets: Optional[np.ndarray] = None


def _pts(cloud):
    return cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)


def _scatter3(n, i, gi, j, gj):
    out = np.empty((n, 3))
    for c in range(3):
        out[:, c] = np.bincount(i, gi[:, c], n) + np.bincount(j, gj[:, c], n)
    return out


def _projections(samples, points, normals):
    i, j, x = samples.site_i, samples.site_j, samples.positions
    ri = x - points[i]
    rj = x - points[j]
    ai = np.einsum("ij,ij->i", ri, normals[i])
    aj = np.einsum("ij,ij->i", rj, normals[j])
    return ri, rj, ai, aj


def energy_d(samples, cloud, normals, grad=True):
    """Weighted sum of value jumps ``|F_i(x) - F_j(x)|`` over bisector samples."""
    points = _pts(cloud)
    ri, rj, ai, aj = _projections(samples, points, normals)
    w = samples.weights
    diff = np.abs(ai) - np.abs(aj)
    value = float(np.sum(w * np.abs(diff)))
    if not grad:
        return value, None
    sd = np.sign(diff)
    si = np.where(ai >= 0, 1.0, -1.0)
    sj = np.where(aj >= 0, 1.0, -1.0)
    gi = (w * sd * si)[:, None] * ri
    gj = -(w * sd * sj)[:, None] * rj
    return value, _scatter3(len(points), samples.site_i, gi, samples.site_j, gj)


def energy_g(samples, cloud, normals, grad=True):
    """Weighted sum of gradient jumps ``||s_i n_i - s_j n_j||``; the side
    signs ``s`` are treated as locally constant."""
    points = _pts(cloud)
    _, _, ai, aj = _projections(samples, points, normals)
    w = samples.weights
    si = np.where(ai >= 0, 1.0, -1.0)
    sj = np.where(aj >= 0, 1.0, -1.0)
    dvec = si[:, None] * normals[samples.site_i] - sj[:, None] * normals[samples.site_j]
    norm = np.linalg.norm(dvec, axis=1)
    value = float(np.sum(w * norm))
    if not grad:
        return value, None
    unit = np.divide(dvec, norm[:, None], out=np.zeros_like(dvec), where=norm[:, None] > 0)
    gi = (w * si)[:, None] * unit
    gj = -(w * sj)[:, None] * unit
    return value, _scatter3(len(points), samples.site_i, gi, samples.site_j, gj)


def _neighbor_dirs(neighbor_sets, points):
    i, q = neighbor_sets.pairs()
    r = points[q] - points[i]
    length = np.linalg.norm(r, axis=1)
    return i, q, r / length[:, None], length


def energy_align(neighbor_sets, cloud, normals, variant="orthogonal", grad=True):
    """Alignment regularizer over the 2-means neighbor sets.

    ``orthogonal`` penalizes ``(n_i . d)^2`` so normals leave the local
    tangent directions; ``verbatim`` is ``(1 - n_i . d)^2``.
    """
    points = _pts(cloud)
    i, _, d, _ = _neighbor_dirs(neighbor_sets, points)
    c = np.einsum("ij,ij->i", normals[i], d)
    if variant == "orthogonal":
        value = float(np.sum(c * c))
        coef = 2 * c
    elif variant == "verbatim":
        value = float(np.sum((1 - c) ** 2))
        coef = -2 * (1 - c)
    else:
        raise ValueError(f"unknown align variant {variant!r}")
    if not grad:
        return value, None
    g = coef[:, None] * d
    out = np.empty((len(points), 3))
    for k in range(3):
        out[:, k] = np.bincount(i, g[:, k], len(points))
    return value, out


def energy_normal(samples, neighbor_sets, cloud, normals, config, grad=True):
    """Weighted objective for the normal-optimization stage."""
    ed, gd = energy_d(samples, cloud, normals, grad)
    eg, gg = energy_g(samples, cloud, normals, grad)
    ea, ga = energy_align(neighbor_sets, cloud, normals, config.align_variant, grad)
    total = config.lambda_d * ed + config.lambda_g * eg + config.lambda_a * ea
    g = config.lambda_d * gd + config.lambda_g * gg + config.lambda_a * ga if grad else None
    return EnergyBreakdown(ed, eg, ea, 0.0, total, grad_normals=g)


def energy_offset(samples, neighbor_sets, cloud, normals, offsets, config, grad=True):
    """Objective of the position-rectification stage.

    Points move to ``p_i + offsets_i * n_i`` while the bisector samples and
    neighbor sets stay fixed.  Gradients are taken with respect to the
    offsets only.
    """
    base = _pts(cloud)
    offsets = np.asarray(offsets, dtype=np.float64)
    n = len(base)
    points = base + offsets[:, None] * normals
    i, j = samples.site_i, samples.site_j
    ri, rj, ai, aj = _projections(samples, points, normals)
    w = samples.weights
    diff = np.abs(ai) - np.abs(aj)
    e_d = float(np.sum(w * np.abs(diff)))

    pi, pq, d, length = _neighbor_dirs(neighbor_sets, points)
    c = np.einsum("ij,ij->i", normals[pi], d)
    if config.align_variant == "orthogonal":
        e_a = float(np.sum(c * c))
        coef = 2 * c
    else:
        e_a = float(np.sum((1 - c) ** 2))
        coef = -2 * (1 - c)
    e_reg = float(np.mean(offsets ** 2))
    total = config.lambda_d * e_d + config.lambda_a * e_a + config.lambda_p * e_reg
    if not grad:
        return EnergyBreakdown(e_d, 0.0, e_a, e_reg, total)

    nn = np.einsum("ij,ij->i", normals, normals)
    sd = np.sign(diff)
    si = np.where(ai >= 0, 1.0, -1.0)
    sj = np.where(aj >= 0, 1.0, -1.0)
    # d a_i / d offset_i = -n_i . n_i
    g_d = np.bincount(i, -w * sd * si * nn[i], n) + np.bincount(j, w * sd * sj * nn[j], n)

    # d f / d r with r = q_q - q_i, d = r / |r|
    dfdr = (coef / length)[:, None] * (normals[pi] - c[:, None] * d)
    g_a = np.bincount(pq, np.einsum("ij,ij->i", dfdr, normals[pq]), n) - np.bincount(
        pi, np.einsum("ij,ij->i", dfdr, normals[pi]), n
    )
    g_reg = 2 * offsets / n
    g = config.lambda_d * g_d + config.lambda_a * g_a + config.lambda_p * g_reg
    return EnergyBreakdown(e_d, 0.0, e_a, e_reg, total, grad_offsets=g)
