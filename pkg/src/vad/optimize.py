"""Gradient-descent stages: bi-directional normal optimization, position
rectification along normals, and their alternation."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .core import BiDirectionalField, VadError
from .energy import energy_normal, energy_offset
from . import voronoi

log = logging.getLogger(__name__)

WINDOW = 50
WINDOW_REL_TOL = 1e-5


class NonFiniteEnergy(VadError):
    pass


class Adam:
    """Adam with bias correction; moments live on the instance."""

    def __init__(self, shape, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, params, grad, lr):
        self.t += 1
        self.m *= self.beta1
        self.m += (1 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        params -= lr * mhat / (np.sqrt(vhat) + self.eps)
        return params


@dataclass
class Trace:
    """Per-iteration energy record, concatenated across stages."""

    rows: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)

    def append(self, stage, breakdown):
        self.rows.append((len(self.rows) + 1, breakdown.total, breakdown.e_d, breakdown.e_g,
                          breakdown.e_align, breakdown.e_reg, stage))

    def add_time(self, key, seconds):
        self.timings[key] = self.timings.get(key, 0.0) + seconds

    def extend(self, other):
        for row in other.rows:
            self.rows.append((len(self.rows) + 1,) + tuple(row[1:]))
        for k, v in other.timings.items():
            self.add_time(k, v)
        self.stages.extend(other.stages)

    @property
    def totals(self):
        return np.array([r[1] for r in self.rows])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["iteration", "total", "e_d", "e_g", "e_align", "e_reg"])
            for row in self.rows:
                out.writerow([row[0]] + [repr(float(v)) for v in row[1:6]])


def _hard_constraints(constraints, n):
    if constraints is None or len(constraints) == 0:
        return np.zeros(0, np.int64), np.zeros((0, 3)), np.zeros(0, np.int64), np.zeros((0, 3))
    constraints.check_bounds(n)
    idx, dirs, hard = constraints.indices, constraints.directions, constraints.hard
    return idx[hard], dirs[hard], idx[~hard], dirs[~hard]


def _converged(totals):
    if len(totals) <= WINDOW:
        return False
    old, new = totals[-WINDOW - 1], totals[-1]
    if old == 0:
        return True
    return (old - new) / abs(old) < WINDOW_REL_TOL


def random_unit_vectors(n, rng):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def optimize_normals(cloud, complex_, samples, neighbor_sets, constraints, config, seed=0, init=None):
    """Minimize the normal energy with Adam.

    The parameters are free vectors ``v`` and the energy is evaluated at
    ``v / |v|`` (projection distances are scale invariant), so the gradient
    is the tangential part divided by ``|v|``.  Vectors start uniformly on
    the sphere (or from ``init``); hard constraints start at and keep their
    fixed direction.  Stops after ``config.max_iterations`` or once the
    total energy improves by less than 1e-5 (relative) over 50 iterations.
    """
    points = cloud.points
    n = len(points)
    rng = np.random.default_rng(seed)
    normals = random_unit_vectors(n, rng) if init is None else np.array(
        init.vectors if isinstance(init, BiDirectionalField) else init, dtype=np.float64)
    h_idx, h_dir, s_idx, s_dir = _hard_constraints(constraints, n)
    normals[s_idx] = s_dir
    normals[h_idx] = h_dir
    free = np.ones(n, bool)
    free[h_idx] = False

    trace = Trace(stages=["normals"])
    opt = Adam(normals.shape)
    t0 = time.perf_counter()
    totals = []
    v = normals
    for it in range(1, config.max_iterations + 1):
        length = np.linalg.norm(v, axis=1, keepdims=True)
        unit = v / length
        br = energy_normal(samples, neighbor_sets, points, unit, config)
        if not np.isfinite(br.total) or not np.all(np.isfinite(br.grad_normals)):
            _dump_nonfinite(samples, points, unit)
            raise NonFiniteEnergy(f"non-finite normal energy at iteration {it}")
        trace.append("normals", br)
        totals.append(br.total)
        if _converged(totals):
            break
        g = br.grad_normals
        # chain rule through v / |v|
        g = (g - np.einsum("ij,ij->i", g, unit)[:, None] * unit) / length
        g[~free] = 0.0
        lr = config.learning_rate * (0.1 if it >= config.lr_decay_iteration else 1.0)
        opt.step(v, g, lr)
        v[h_idx] = h_dir
    trace.add_time("adam", time.perf_counter() - t0)
    return BiDirectionalField(v), trace


def _dump_nonfinite(samples, points, normals):
    bad = ~np.all(np.isfinite(normals), axis=1)
    log.error("non-finite state: %d bad normals; first sample %s weight %s between sites %s,%s",
              int(bad.sum()), samples.positions[:1], samples.weights[:1], samples.site_i[:1], samples.site_j[:1])


def optimize_positions(cloud, normals, config, seed=0, samples=None, neighbor_sets=None):
    """Move points along their (fixed) normals to lower the offset energy.

    Runs Adam over the offsets for ``max_iterations // 2`` steps or until the
    windowed stopping rule fires.  Bisector samples and neighbor sets are
    built once from the input positions when not supplied.
    """
    vec = normals.vectors if isinstance(normals, BiDirectionalField) else np.asarray(normals)
    trace = Trace(stages=["positions"])
    if samples is None or neighbor_sets is None:
        cx, samples, neighbor_sets, times = build_structures(cloud, config, seed)
        for k, v in times.items():
            trace.add_time(k, v)
    n = len(cloud)
    offsets = np.zeros(n)
    opt = Adam(n)
    t0 = time.perf_counter()
    totals = []
    for it in range(1, max(1, config.max_iterations // 2) + 1):
        br = energy_offset(samples, neighbor_sets, cloud.points, vec, offsets, config)
        if not np.isfinite(br.total) or not np.all(np.isfinite(br.grad_offsets)):
            raise NonFiniteEnergy(f"non-finite offset energy at iteration {it}")
        trace.append("positions", br)
        totals.append(br.total)
        if _converged(totals):
            break
        lr = config.offset_learning_rate * (0.1 if it >= config.lr_decay_iteration else 1.0)
        opt.step(offsets, br.grad_offsets, lr)
    trace.add_time("adam", time.perf_counter() - t0)
    moved = cloud.with_points(cloud.points + offsets[:, None] * vec)
    return moved, offsets, trace


def build_structures(cloud, config, seed=0):
    """Voronoi complex, bisector samples and neighbor sets, with timings."""
    times = {}
    t0 = time.perf_counter()
    cx = voronoi.build_voronoi(cloud)
    times["voronoi"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    budget = config.bisector_sample_budget or 10 * len(cloud)
    budget = max(budget, int(np.count_nonzero(~cx.facet_is_auxiliary)))
    samples = voronoi.sample_bisectors(cx, budget, seed)
    nbrs = voronoi.neighbor_sets(cx, cloud, seed)
    times["sampling"] = time.perf_counter() - t0
    return cx, samples, nbrs, times


def run_alternating(cloud, constraints, config, seed=0):
    """Normal optimization, optionally alternated with position rectification.

    Returns the final cloud, normals and the concatenated trace.
    """
    trace = Trace()
    cx, samples, nbrs, times = build_structures(cloud, config, seed)
    for k, v in times.items():
        trace.add_time(k, v)
    normals, tr = optimize_normals(cloud, cx, samples, nbrs, constraints, config, seed)
    trace.extend(tr)
    if config.denoise:
        for _ in range(config.denoise_rounds):
            cloud, _, tr = optimize_positions(cloud, normals, config, seed, samples, nbrs)
            trace.extend(tr)
            cx, samples, nbrs, times = build_structures(cloud, config, seed)
            for k, v in times.items():
                trace.add_time(k, v)
            normals, tr = optimize_normals(cloud, cx, samples, nbrs, constraints, config, seed, init=normals)
            trace.extend(tr)
    return cloud, normals, trace
