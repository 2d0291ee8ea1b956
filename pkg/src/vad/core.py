"""Core value types, domain normalization and run configuration."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)

BOX_HALF_EXTENT = 0.4
DUPLICATE_TOL = 1e-12
COPLANAR_TOL = 1e-9


class VadError(Exception):
    """Base class for all library errors."""


class EmptyCloud(VadError):
    pass


class DegenerateCloud(VadError):
    pass


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Point positions plus optional reference normals.

    ``scale`` and ``translation`` map original coordinates to the stored ones:
    ``stored = original * scale + translation``.
    """

    points: np.ndarray
    gt_normals: Optional[np.ndarray] = None
    scale: float = 1.0
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        if self.gt_normals is not None:
            nrm = np.asarray(self.gt_normals, dtype=np.float64).reshape(-1, 3)
            if len(nrm) != len(pts):
                raise ValueError("gt_normals length does not match points")
            object.__setattr__(self, "gt_normals", _unit_rows(nrm))

    def __len__(self):
        return len(self.points)

    def to_original(self, x):
        """Map stored (normalized) coordinates back to the original frame."""
        return (np.asarray(x, dtype=np.float64) - self.translation) / self.scale

    def from_original(self, x):
        return np.asarray(x, dtype=np.float64) * self.scale + self.translation

    def with_points(self, points):
        return replace(self, points=points)


@dataclass(frozen=True, eq=False)
class BiDirectionalField:
    """One sign-ambiguous unit vector per point; ``v`` and ``-v`` are equivalent."""

    vectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vectors", _unit_rows(np.asarray(self.vectors, dtype=np.float64).reshape(-1, 3)))

    def __len__(self):
        return len(self.vectors)


@dataclass(frozen=True)
class Config:
    """All tunable parameters of a run.

    ``diffusion_time_t`` and ``epsilon_split`` default to ``h**2`` and
    ``1e-4 * h`` where ``h`` is the minimum pairwise point distance; call
    :meth:`resolved` to fill them in.  ``bisector_sample_budget`` defaults to
    ten samples per point.
    """

    lambda_d: float = 1e3
    lambda_g: float = 0.01
    lambda_a: float = 1.0
    lambda_p: float = 1e2
    diffusion_time_t: Optional[float] = None
    epsilon_split: Optional[float] = None
    learning_rate: float = 0.1
    offset_learning_rate: float = 1e-4
    lr_decay_iteration: int = 700
    max_iterations: int = 1000
    grid_resolution: int = 128
    denoise: bool = False
    denoise_rounds: int = 1
    align_variant: str = "orthogonal"
    bisector_sample_budget: Optional[int] = None
    rng_seed: int = 0
    eps_grid_auto: bool = False

    def __post_init__(self):
        for name in ("lambda_d", "lambda_g", "lambda_a", "lambda_p"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.align_variant not in ("orthogonal", "verbatim"):
            raise ValueError(f"unknown align_variant {self.align_variant!r}")
        if self.max_iterations < 1 or self.denoise_rounds < 1 or self.grid_resolution < 2:
            raise ValueError("iteration counts and grid resolution must be positive")
        if self.learning_rate <= 0 or self.offset_learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    @classmethod
    def noisy(cls, **overrides):
        """Defaults for noisy inputs (position rectification enabled)."""
        base = dict(lambda_d=10.0, lambda_g=0.1, lambda_a=1.0, lambda_p=1e2, denoise=True)
        base.update(overrides)
        return cls(**base)

    def resolved(self, h, n_points=None):
        """Fill data-dependent defaults from the minimum point spacing ``h``."""
        t = self.diffusion_time_t if self.diffusion_time_t is not None else h * h
        eps = self.epsilon_split if self.epsilon_split is not None else 1e-4 * h
        budget = self.bisector_sample_budget
        if budget is None and n_points is not None:
            budget = 10 * n_points
        return replace(self, diffusion_time_t=t, epsilon_split=eps, bisector_sample_budget=budget)


def _unit_rows(v):
    n = np.linalg.norm(v, axis=1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("zero-length vector")
    return v / n


def _merge_duplicates(points, tol):
    tree = cKDTree(points)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        return np.arange(len(points))
    drop = np.zeros(len(points), dtype=bool)
    # keep the lower index of each coincident pair
    drop[pairs.max(axis=1)] = True
    log.warning("merged %d duplicate points", int(drop.sum()))
    return np.flatnonzero(~drop)


def check_not_coplanar(points):
    if len(points) < 4:
        raise DegenerateCloud(f"need at least 4 points, got {len(points)}")
    lo, hi = points.min(axis=0), points.max(axis=0)
    diag = float(np.linalg.norm(hi - lo))
    if diag == 0:
        raise DegenerateCloud("all points coincide")
    s = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    if s[-1] < COPLANAR_TOL * diag:
        raise DegenerateCloud("points are coplanar")


def normalize_to_unit_box(cloud):
    """Center the bounding box at the origin and scale uniformly so the
    longest axis spans exactly [-0.4, 0.4].  Duplicate points are merged."""
    pts = cloud.points
    if len(pts) == 0:
        raise EmptyCloud("point cloud is empty")
    check_not_coplanar(pts)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    extent = float(np.max(hi - lo))
    scale = 2 * BOX_HALF_EXTENT / extent
    center = 0.5 * (lo + hi)
    if abs(scale - 1.0) < 1e-12 and np.all(np.abs(center) < 1e-12):
        scale, center = 1.0, np.zeros(3)
    translation = -center * scale
    new_pts = pts * scale + translation
    keep = _merge_duplicates(new_pts, DUPLICATE_TOL)
    normals = cloud.gt_normals[keep] if cloud.gt_normals is not None else None
    # compose with any transform already recorded on the input
    total_scale = cloud.scale * scale
    total_translation = cloud.translation * scale + translation
    return PointCloud(new_pts[keep], normals, total_scale, total_translation)


def min_pairwise_distance(cloud):
    """Smallest distance between two distinct points (exact)."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if len(pts) < 2:
        raise EmptyCloud("need at least two points")
    tree = cKDTree(pts)
    d, _ = tree.query(pts, k=2)
    # recompute the near-tie candidates as plain norms so the result is
    # bit-identical to an exhaustive scan
    pairs = tree.query_pairs(float(d[:, 1].min()) * (1 + 1e-9), output_type="ndarray")
    if len(pairs) == 0:
        return float(d[:, 1].min())
    return float(np.linalg.norm(pts[pairs[:, 0]] - pts[pairs[:, 1]], axis=1).min())
