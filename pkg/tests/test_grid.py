import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vad import grid as G


def _dense_ghost_laplacian(dims, s):
    """Mirrored-ghost 7-point Laplacian assembled node by node (x fastest)."""
    nx, ny, nz = dims
    n = nx * ny * nz
    L = np.zeros((n, n))
    idx = lambda i, j, k: i + nx * (j + ny * k)  # noqa: E731
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                r = idx(i, j, k)
                for axis, (c, m) in enumerate(((i, nx), (j, ny), (k, nz))):
                    for step in (-1, 1):
                        q = c + step
                        if q < 0 or q >= m:
                            q = c - step  # ghost mirrors the interior neighbor
                        nb = [i, j, k]
                        nb[axis] = q
                        L[r, idx(*nb)] += 1.0 / s ** 2
                    L[r, r] -= 2.0 / s ** 2
    return L


def _ghost_flux_term(y, s):
    """Contribution of the ghost values carrying Neumann data ``Y . n_out``
    to the mirrored-ghost Laplacian, node by node."""
    nx, ny, nz = y.shape[:3]
    out = np.zeros((nx, ny, nz))
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                for axis, c, m in ((0, i, nx), (1, j, ny), (2, k, nz)):
                    if c == 0:
                        out[i, j, k] += 2.0 / s * (-y[i, j, k, axis])
                    if c == m - 1:
                        out[i, j, k] += 2.0 / s * y[i, j, k, axis]
    return out


def test_splat_trivial_cases():
    g = G.make_grid(5)
    node = g.node_positions()[37]
    out = G.splat(g, node[None], [1.0]).flat()
    assert out[37] == pytest.approx(1.0) and np.sum(out) == pytest.approx(1.0)
    center = g.origin + g.spacing * np.array([1.5, 2.5, 0.5])
    out = G.splat(g, center[None], [1.0]).flat()
    assert np.allclose(out[out > 0], 0.125) and np.count_nonzero(out) == 8
    with pytest.raises(G.OutOfDomain):
        G.splat(g, np.array([[0.6, 0, 0]]), [1.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_splat_partition_of_unity(seed):
    rng = np.random.default_rng(seed)
    g = G.make_grid(7, 3)
    x = rng.uniform(-0.5, 0.5, (50, 3))
    v = rng.normal(size=(50, 3))
    out = G.splat(g, x, v).flat()
    assert np.allclose(out.sum(axis=0), v.sum(axis=0), atol=1e-12)
    # sampling is the adjoint of splatting
    u = rng.normal(size=(g.n_nodes, 3))
    lhs = np.sum(G.sample(g.with_flat(u), x) * v)
    assert lhs == pytest.approx(np.sum(u * out), rel=1e-10)


def test_node_positions_x_fastest():
    g = G.make_grid(4)
    p = g.node_positions()
    assert np.allclose(p[1] - p[0], [g.spacing, 0, 0])
    assert np.allclose(p[4] - p[0], [0, g.spacing, 0])


@pytest.mark.parametrize("n", [5, 8])
def test_laplacian_matches_loop_oracle(rng, n):
    g = G.make_grid(n)
    u = rng.normal(size=g.n_nodes)
    L = _dense_ghost_laplacian(g.dims, g.spacing)
    assert np.allclose(G.laplacian(g.with_flat(u)).flat(), L @ u, rtol=1e-12, atol=1e-9)


def test_weighted_greens_identity(rng):
    """``W L`` is symmetric: sum W u L v = sum W v L u, and L 1 = 0."""
    g = G.make_grid(9)
    w = G.volume_weights(g.dims)
    u, v = rng.normal(size=(2, g.n_nodes))
    lu = G.laplacian(g.with_flat(u)).flat()
    lv = G.laplacian(g.with_flat(v)).flat()
    assert np.sum(w * u * lv) == pytest.approx(np.sum(w * v * lu), rel=1e-10)
    assert np.allclose(G.laplacian(g.with_flat(np.ones(g.n_nodes))).flat(), 0, atol=1e-9)
    k = G.graph_laplacian(g.dims)
    assert abs(k - k.T).max() == 0


def test_divergence_cases(rng):
    g = G.make_grid(9, 3)
    const = g.with_flat(np.tile([1.0, -2.0, 3.0], (g.n_nodes, 1)))
    assert np.allclose(G.divergence(const).data, 0)
    lin = g.with_flat(np.column_stack([g.node_positions()[:, 0], np.zeros(g.n_nodes), np.zeros(g.n_nodes)]))
    assert np.allclose(G.divergence(lin).data, 1.0, atol=1e-10)
    y = rng.normal(size=(9, 9, 9, 3))
    d = G.divergence(G.VoxelGrid(y, g.origin, g.spacing)).data
    # independent stencil: central inside, one-sided at the two ends
    ref = np.zeros((9, 9, 9))
    s = g.spacing
    for a in range(3):
        f = np.moveaxis(y[..., a], a, 0)
        dv = np.empty_like(f)
        dv[1:-1] = (f[2:] - f[:-2]) / (2 * s)
        dv[0] = (f[1] - f[0]) / s
        dv[-1] = (f[-1] - f[-2]) / s
        ref += np.moveaxis(dv, 0, a)
    assert np.allclose(d, ref, rtol=1e-12, atol=1e-12)


def test_screened_poisson_trivial():
    g = G.make_grid(8)
    c = g.with_flat(np.full(g.n_nodes, 2.5))
    y, _ = G.solve_screened_poisson(c, 0.3)
    assert np.allclose(y.flat(), 2.5, rtol=1e-10)
    z, info = G.solve_screened_poisson(G.make_grid(8), 0.3)
    assert np.all(z.flat() == 0) and info.iterations == 0
    with pytest.raises(ValueError):
        G.solve_screened_poisson(c, 0.0)


@pytest.mark.parametrize("n", [12, 16])
def test_screened_poisson_matches_dense_solve(rng, n):
    g = G.make_grid(n)
    src = rng.normal(size=g.n_nodes)
    t = 2.0 * g.spacing ** 2
    y, _ = G.solve_screened_poisson(g.with_flat(src), t)
    L = _dense_ghost_laplacian(g.dims, g.spacing)
    ref = np.linalg.solve(L - np.eye(g.n_nodes) / t, -src / t)
    assert np.linalg.norm(y.flat() - ref) <= 1e-6 * np.linalg.norm(ref)


def test_screened_poisson_multicomponent_matches_per_component(rng):
    g = G.make_grid(10, 3)
    src = rng.normal(size=(g.n_nodes, 3))
    y, _ = G.solve_screened_poisson(g.with_flat(src), 0.01)
    for c in range(3):
        yc, _ = G.solve_screened_poisson(G.make_grid(10).with_flat(src[:, c]), 0.01)
        assert np.allclose(y.flat()[:, c], yc.flat(), rtol=1e-9, atol=1e-12)


def test_poisson_dirichlet_trivial():
    g = G.make_grid(8)
    u, _ = G.solve_poisson_dirichlet(g, [0, 100, 200])
    assert np.all(u.flat() == 0)
    with pytest.raises(G.EmptyZeroSet):
        G.solve_poisson_dirichlet(g, [])


@pytest.mark.parametrize("n", [12, 14])
def test_poisson_dirichlet_matches_dense_solve(rng, n):
    g = G.make_grid(n)
    f = rng.normal(size=g.n_nodes)
    zs = rng.choice(g.n_nodes, 20, replace=False)
    u, _ = G.solve_poisson_dirichlet(g.with_flat(f), zs, tol=1e-12)
    L = _dense_ghost_laplacian(g.dims, g.spacing)
    free = np.setdiff1d(np.arange(g.n_nodes), zs)
    ref = np.zeros(g.n_nodes)
    ref[free] = np.linalg.solve(L[np.ix_(free, free)], f[free])
    assert np.linalg.norm(u.flat() - ref) <= 1e-6 * np.linalg.norm(ref)
    assert np.all(u.flat()[zs] == 0)


def test_poisson_dirichlet_neumann_data_matches_ghost_oracle(rng):
    n = 10
    g = G.make_grid(n)
    y = rng.normal(size=(n, n, n, 3))
    yg = G.VoxelGrid(y, g.origin, g.spacing)
    div = G.divergence(yg)
    zs = rng.choice(g.n_nodes, 15, replace=False)
    u, _ = G.solve_poisson_dirichlet(div, zs, boundary_field=yg, tol=1e-12)
    L = _dense_ghost_laplacian(g.dims, g.spacing)
    rhs = div.flat() - _ghost_flux_term(y, g.spacing).ravel(order="F")
    free = np.setdiff1d(np.arange(g.n_nodes), zs)
    ref = np.zeros(g.n_nodes)
    ref[free] = np.linalg.solve(L[np.ix_(free, free)], rhs[free])
    assert np.linalg.norm(u.flat() - ref) <= 1e-6 * np.linalg.norm(ref)


@pytest.mark.parametrize("n", [17, 33])
def test_slab_distance_to_plane(n):
    g = G.make_grid(n, 3)
    z = g.node_positions()[:, 2]
    mid = n // 2
    y = np.zeros((g.n_nodes, 3))
    y[:, 2] = np.sign(z)
    yg = g.with_flat(y)
    zs = np.flatnonzero(np.isclose(z, 0.0, atol=1e-12))
    assert len(zs) == n * n
    u, _ = G.solve_poisson_dirichlet(G.divergence(yg), zs, boundary_field=yg)
    assert mid == (n - 1) // 2
    assert np.max(np.abs(u.flat() - np.abs(z))) <= g.spacing


def test_cg_error_decreases_in_energy_norm(rng):
    g = G.make_grid(8)
    k = G.graph_laplacian(g.dims)
    A = k.toarray() + 0.3 * np.eye(g.n_nodes)
    b = rng.normal(size=g.n_nodes)
    xs = np.linalg.solve(A, b)
    prev = np.inf
    for it in range(1, 25):
        x, info = G.conjugate_gradient(lambda v: A @ v, b, tol=1e-30, maxiter=it)
        e = x - xs
        err = float(e @ A @ e)
        assert err <= prev * (1 + 1e-12)
        prev = err
    x, info = G.conjugate_gradient(lambda v: A @ v, b, tol=1e-10, record=True)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b) * 1.0001
    assert info.history[-1] == pytest.approx(info.residual)


def test_cg_multi_column_and_divergence_guard(rng):
    A = np.diag(np.arange(1.0, 21.0))
    B = rng.normal(size=(20, 3))
    X, _ = G.conjugate_gradient(lambda v: A @ v, B, tol=1e-12)
    assert np.allclose(A @ X, B, atol=1e-9)
    # an indefinite operator cannot reduce the residual from a zero start
    with pytest.raises(G.SolverDiverged):
        G.conjugate_gradient(lambda v: -v, np.ones(5), maxiter=3)
