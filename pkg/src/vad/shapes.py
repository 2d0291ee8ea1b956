"""Analytic test shapes with exact normals and distance functions.

Every sampler returns ``(points, normals)`` drawn from the given seed.
Shapes live in a box of roughly unit size; callers normalize.
"""

from __future__ import annotations

import numpy as np


def _rng(seed):
    return np.random.default_rng(seed)


def sphere(n, radius=1.0, seed=0):
    v = _rng(seed).normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return radius * v, v.copy()


def sphere_udf(x, radius=1.0, center=(0.0, 0.0, 0.0)):
    return np.abs(np.linalg.norm(np.asarray(x) - np.asarray(center), axis=-1) - radius)


def hemisphere(n, radius=1.0, seed=0):
    """Open upper hemisphere ``z >= 0`` (area-uniform: z is uniform)."""
    rng = _rng(seed)
    z = rng.uniform(0.0, 1.0, n)
    phi = rng.uniform(0.0, 2 * np.pi, n)
    s = np.sqrt(1 - z * z)
    v = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)
    return radius * v, v.copy()


def _torus_param(u, v, R, r):
    cu, su, cv, sv = np.cos(u), np.sin(u), np.cos(v), np.sin(v)
    p = np.stack([(R + r * cv) * cu, (R + r * cv) * su, r * sv], axis=1)
    nrm = np.stack([cv * cu, cv * su, sv], axis=1)
    return p, nrm


def torus(n, R=0.3, r=0.12, seed=0):
    rng = _rng(seed)
    u, v = [], []
    # area element is proportional to R + r cos v; rejection sample v
    while sum(len(a) for a in v) < n:
        cand = rng.uniform(0, 2 * np.pi, 2 * n)
        keep = rng.uniform(0, R + r, 2 * n) < R + r * np.cos(cand)
        v.append(cand[keep])
    v = np.concatenate(v)[:n]
    u = rng.uniform(0, 2 * np.pi, n)
    return _torus_param(u, v, R, r)


def torus_udf(x, R=0.3, r=0.12):
    x = np.asarray(x)
    q = np.hypot(x[..., 0], x[..., 1]) - R
    return np.abs(np.hypot(q, x[..., 2]) - r)


def mobius(n, radius=1.0, half_width=0.4, seed=0):
    """Moebius band ``c(u) + s * w(u)``; normals from the cross product of
    the partial derivatives (sign-ambiguous by construction)."""
    rng = _rng(seed)
    us, ss = [], []
    while sum(len(a) for a in us) < n:
        u = rng.uniform(0, 2 * np.pi, 4 * n)
        s = rng.uniform(-half_width, half_width, 4 * n)
        dens = _mobius_area(u, s, radius)
        keep = rng.uniform(0, _mobius_area_max(radius, half_width), 4 * n) < dens
        us.append(u[keep])
        ss.append(s[keep])
    u = np.concatenate(us)[:n]
    s = np.concatenate(ss)[:n]
    return _mobius_eval(u, s, radius)


def _mobius_eval(u, s, radius):
    c2, s2 = np.cos(u / 2), np.sin(u / 2)
    cu, su = np.cos(u), np.sin(u)
    p = np.stack([(radius + s * c2) * cu, (radius + s * c2) * su, s * s2], axis=1)
    du = np.stack([
        -0.5 * s * s2 * cu - (radius + s * c2) * su,
        -0.5 * s * s2 * su + (radius + s * c2) * cu,
        0.5 * s * c2,
    ], axis=1)
    ds = np.stack([c2 * cu, c2 * su, s2], axis=1)
    nrm = np.cross(du, ds)
    return p, nrm / np.linalg.norm(nrm, axis=1, keepdims=True)


def _mobius_area(u, s, radius):
    c2 = np.cos(u / 2)
    return np.sqrt((radius + s * c2) ** 2 + 0.25 * s * s)


def _mobius_area_max(radius, half_width):
    return np.sqrt((radius + half_width) ** 2 + 0.25 * half_width ** 2)


def plane(n, seed=0, extent=0.8):
    """Random points on the plane ``z = 0`` inside a square."""
    rng = _rng(seed)
    xy = rng.uniform(-extent / 2, extent / 2, (n, 2))
    p = np.column_stack([xy, np.zeros(n)])
    return p, np.tile([0.0, 0.0, 1.0], (n, 1))


def petal_strip(n, seed=0, length=1.0, width=0.3, amplitude=0.15):
    """Open wavy strip ``z = a sin(2 pi x / L)`` over a rectangle with its
    upward-oriented normals."""
    rng = _rng(seed)
    x = rng.uniform(-length / 2, length / 2, n)
    y = rng.uniform(-width / 2, width / 2, n)
    k = 2 * np.pi / length
    z = amplitude * np.sin(k * x)
    p = np.column_stack([x, y, z])
    nrm = np.column_stack([-amplitude * k * np.cos(k * x), np.zeros(n), np.ones(n)])
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return p, nrm


def strip_boundary(points, width=0.3, band=0.02):
    """Indices of strip points within ``band`` of a long edge."""
    return np.flatnonzero(np.abs(np.abs(points[:, 1]) - width / 2) < band)


def add_noise(points, sigma, seed=0):
    return points + _rng(seed).normal(scale=sigma, size=points.shape)
