"""Projection distances and the piecewise-linear projection distance field."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .core import BiDirectionalField, PointCloud, VadError


class ZeroVector(VadError):
    pass


def projection_distance(p, v, x):
    """Distance from ``x`` to the plane through ``p`` orthogonal to ``v``.

    Invariant under ``v -> c * v`` for any nonzero ``c``.  Broadcasts over
    leading axes.
    """
    p, v, x = (np.asarray(a, dtype=np.float64) for a in (p, v, x))
    nv = np.linalg.norm(v, axis=-1)
    if np.any(nv == 0):
        raise ZeroVector("projection direction has zero length")
    return np.abs(np.sum((x - p) * v, axis=-1)) / nv


class ProjectionFieldView:
    """Read-only evaluator of the projection distance field of a cloud."""

    def __init__(self, points, normals):
        self.points = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64)
        vec = normals.vectors if isinstance(normals, BiDirectionalField) else np.asarray(normals, dtype=np.float64)
        self.normals = vec / np.linalg.norm(vec, axis=1, keepdims=True)
        self.tree = cKDTree(self.points)

    def nearest(self, x):
        _, j = self.tree.query(np.asarray(x, dtype=np.float64))
        return j


def evaluate_field(view, x):
    """Value, gradient and cell index of the projection field at ``x``.

    ``x`` may be a single point or an (m, 3) array.  The gradient inside
    cell ``j`` is ``sign((x - p_j) . n_j) * n_j`` with ``sign(0) = +1``.
    """
    x = np.asarray(x, dtype=np.float64)
    j = view.nearest(x)
    n = view.normals[j]
    a = np.sum((x - view.points[j]) * n, axis=-1)
    s = np.where(a >= 0, 1.0, -1.0)
    return np.abs(a), s[..., None] * n, j
