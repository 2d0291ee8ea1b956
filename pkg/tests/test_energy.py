import numpy as np
import pytest

from vad import voronoi as V
from vad.core import Config
from vad.energy import energy_align, energy_d, energy_g, energy_normal, energy_offset


def _samples(pos, i, j, w=None):
    pos = np.atleast_2d(np.asarray(pos, float))
    m = len(pos)
    return V.BisectorSamples(pos, np.ones(m) if w is None else np.asarray(w, float),
                             np.zeros(m, np.int64), np.asarray(i), np.asarray(j))


def _nsets(lists):
    off = np.concatenate([[0], np.cumsum([len(x) for x in lists])]).astype(np.int64)
    idx = np.concatenate([np.asarray(x, np.int64) for x in lists]) if lists else np.zeros(0, np.int64)
    return V.NeighborSets(off, idx)


def test_coplanar_points_with_plane_normals_are_zero():
    pts = np.array([[0, 0, 0], [1, 0, 0.0]])
    n = np.array([[0, 0, 1], [0, 0, 1.0]])
    s = _samples([[0.5, 0.2, 0.3], [0.5, -0.1, -0.4]], [0, 0], [1, 1])
    assert energy_d(s, pts, n)[0] == 0.0
    assert np.all(energy_d(s, pts, n)[1] == 0)
    assert energy_g(s, pts, n)[0] == 0.0


def test_collinear_symmetric_case():
    pts = np.array([[0, 0, 0], [1, 0, 0.0]])
    n = np.array([[1, 0, 0], [1, 0, 0.0]])
    s = _samples([[0.5, 0, 0]], [0], [1])
    assert energy_d(s, pts, n)[0] == 0.0
    assert energy_g(s, pts, n)[0] == pytest.approx(2.0)


def test_parallel_same_side_gradient_term_vanishes():
    pts = np.array([[0, 0, 0], [0, 1, 0.0]])
    n = np.array([[0, 0, 1], [0, 0, 1.0]])
    s = _samples([[0.3, 0.5, 0.2]], [0], [1])
    assert energy_g(s, pts, n)[0] == 0.0


def test_alignment_cases():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    ns = _nsets([[1, 2], [], [], []])
    n = np.array([[0, 0, 1], [1, 0, 0], [1, 0, 0], [1, 0, 0.0]])
    assert energy_align(ns, pts, n, "orthogonal")[0] == 0.0
    ns1 = _nsets([[3], [], [], []])
    assert energy_align(ns1, pts, n, "orthogonal")[0] == 1.0
    assert energy_align(ns1, pts, n, "verbatim")[0] == 0.0
    with pytest.raises(ValueError):
        energy_align(ns1, pts, n, "other")


def _setup(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-0.4, 0.4, (10, 3))
    n = rng.normal(size=(10, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    cx = V.build_voronoi(pts)
    s = V.sample_bisectors(cx, 200, seed=seed)
    ns = V.neighbor_sets(cx, pts)
    return pts, n, s, ns


def _signature(s, pts, n):
    i, j, x = s.site_i, s.site_j, s.positions
    ai = np.einsum("ij,ij->i", x - pts[i], n[i])
    aj = np.einsum("ij,ij->i", x - pts[j], n[j])
    return np.sign(ai), np.sign(aj), np.sign(np.abs(ai) - np.abs(aj))


def _fd_check(f, analytic, x0, kinks, step=1e-6):
    """Central differences against ``analytic``, skipping coordinates whose
    perturbation crosses a kink of the absolute values."""
    checked = 0
    flat = x0.ravel()
    for k in range(flat.size):
        xp, xm = flat.copy(), flat.copy()
        xp[k] += step
        xm[k] -= step
        xp, xm = xp.reshape(x0.shape), xm.reshape(x0.shape)
        if any(not np.array_equal(a, b) for a, b in zip(kinks(xp), kinks(xm))):
            continue
        fd = (f(xp) - f(xm)) / (2 * step)
        a = analytic.ravel()[k]
        assert abs(fd - a) <= 1e-4 * max(abs(a), abs(fd), 1e-3), (k, fd, a)
        checked += 1
    return checked


@pytest.mark.parametrize("seed", range(20))
def test_normal_energy_gradients_match_finite_differences(seed):
    pts, n, s, ns = _setup(seed)
    kinks = lambda m: _signature(s, pts, m)  # noqa: E731
    none = lambda m: ()  # noqa: E731
    checked = 0
    checked += _fd_check(lambda m: energy_d(s, pts, m, False)[0], energy_d(s, pts, n)[1], n, kinks)
    checked += _fd_check(lambda m: energy_g(s, pts, m, False)[0], energy_g(s, pts, n)[1], n, kinks)
    for variant in ("orthogonal", "verbatim"):
        checked += _fd_check(lambda m: energy_align(ns, pts, m, variant, False)[0],
                             energy_align(ns, pts, n, variant)[1], n, none)
    cfg = Config()
    br = energy_normal(s, ns, pts, n, cfg)
    checked += _fd_check(lambda m: energy_normal(s, ns, pts, m, cfg, False).total, br.grad_normals, n, kinks)
    assert checked > 100


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("variant", ["orthogonal", "verbatim"])
def test_offset_energy_gradient_matches_finite_differences(seed, variant):
    pts, n, s, ns = _setup(seed)
    rng = np.random.default_rng(100 + seed)
    delta = rng.normal(scale=0.01, size=10)
    cfg = Config(align_variant=variant)
    kinks = lambda d: _signature(s, pts + d[:, None] * n, n)  # noqa: E731
    br = energy_offset(s, ns, pts, n, delta, cfg)
    checked = _fd_check(lambda d: energy_offset(s, ns, pts, n, d, cfg, False).total, br.grad_offsets, delta, kinks)
    assert checked >= 5


def test_offset_energy_trivial_cases():
    pts, n, s, ns = _setup(0)
    cfg = Config()
    br = energy_offset(s, ns, pts, n, np.zeros(10), cfg)
    assert br.e_reg == 0.0
    assert br.e_d == pytest.approx(energy_d(s, pts, n, False)[0], rel=1e-14)
    assert br.e_align == pytest.approx(energy_align(ns, pts, n, "orthogonal", False)[0], rel=1e-14)
    assert energy_offset(s, ns, pts, n, np.ones(10), cfg).e_reg == 1.0
