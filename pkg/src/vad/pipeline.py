"""End-to-end drivers: unoriented cloud to unsigned distance field, and the
signed variant for watertight inputs."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Config, PointCloud, min_pairwise_distance, normalize_to_unit_box
from . import diffusion, grid as G, optimize, sdfext, udf

log = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    cloud: PointCloud
    normals: object
    udf: udf.UdfResult
    fused: diffusion.FusedField
    trace: optimize.Trace
    config: Config
    timings: dict = field(default_factory=dict)


def prepare(cloud, config):
    """Normalize the cloud and fill the data-dependent config defaults."""
    cloud = normalize_to_unit_box(cloud)
    h = min_pairwise_distance(cloud)
    cfg = config.resolved(h, len(cloud))
    if cfg.eps_grid_auto:
        spacing = (G.DOMAIN_HI - G.DOMAIN_LO) / (cfg.grid_resolution - 1)
        cfg = replace(cfg, epsilon_split=spacing / 2)
        log.info("epsilon_split set to half the grid spacing (%.3g)", spacing / 2)
    log.info("min spacing h=%.4g t=%.4g eps=%.4g budget=%d", h, cfg.diffusion_time_t,
             cfg.epsilon_split, cfg.bisector_sample_budget)
    return cloud, cfg


def run_udf(cloud, config=None, constraints=None, seed=None):
    """Normals, optional denoising, diffusion, fusion and integration.

    ``cloud`` is in original coordinates; everything returned lives in the
    normalized frame recorded on the returned cloud.
    """
    config = config or Config()
    seed = config.rng_seed if seed is None else seed
    cloud, cfg = prepare(cloud, config)
    cloud, normals, trace = optimize.run_alternating(cloud, constraints, cfg, seed)
    t0 = time.perf_counter()
    fused = diffusion.diffuse_and_fuse(cloud, normals, cfg.grid_resolution, cfg.diffusion_time_t, cfg.epsilon_split)
    result = udf.integrate(fused, cloud)
    trace.add_time("diffusion+integration", time.perf_counter() - t0)
    timings = {k: trace.timings.get(k, 0.0) for k in ("voronoi", "sampling", "adam", "diffusion+integration")}
    return PipelineResult(cloud, normals, result, fused, trace, cfg, timings)


def run_sdf(cloud, config=None, seed=None):
    """Normals, global orientation and the signed field."""
    config = config or Config()
    seed = config.rng_seed if seed is None else seed
    cloud, cfg = prepare(cloud, config)
    trace = optimize.Trace()
    cx, samples, nbrs, times = optimize.build_structures(cloud, cfg, seed)
    for k, v in times.items():
        trace.add_time(k, v)
    normals, tr = optimize.optimize_normals(cloud, cx, samples, nbrs, None, cfg, seed)
    trace.extend(tr)
    t0 = time.perf_counter()
    oriented, _ = sdfext.orient_globally(cloud, normals, cx)
    trace.add_time("orientation", time.perf_counter() - t0)
    t0 = time.perf_counter()
    result = sdfext.compute_sdf(cloud, oriented, cfg)
    trace.add_time("diffusion+integration", time.perf_counter() - t0)
    return cloud, oriented, result, trace, cfg


def to_original_grid_transform(cloud):
    return float(cloud.scale), np.asarray(cloud.translation, dtype=np.float64)
