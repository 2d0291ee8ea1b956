import numpy as np
import pytest

from vad import grid as G
from vad import shapes, udf
from vad.core import Config
from vad.pipeline import run_udf

from conftest import sphere_cloud


Z0 = 0.013


def _plane_result(n=25):
    g = G.make_grid(n, 3)
    pos = g.node_positions()
    y = np.zeros((g.n_nodes, 3))
    y[:, 2] = np.where(pos[:, 2] >= Z0, 1.0, -1.0)
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(-0.5, 0.5, (3000, 2)), np.full(3000, Z0)])
    return udf.integrate(g.with_flat(y), pts), pos


def test_exact_plane_field_integrates_to_distance():
    res, pos = _plane_result()
    err = np.abs(res.u.flat() - np.abs(pos[:, 2] - Z0))
    assert err.max() <= res.u.spacing
    assert res.diagnostics["negative_fraction"] < 0.01


def test_zero_field_gives_zero():
    g = G.make_grid(9, 3)
    res = udf.integrate(g, np.array([[0.0, 0.0, 0.0]]))
    assert np.all(res.u.flat() == 0)


def test_zero_set_pin_rule():
    g = G.make_grid(5)
    node = g.node_positions()[31]
    assert udf.zero_set_nodes(g, node[None]).tolist() == [31]
    center = g.origin + g.spacing * np.array([1.5, 1.5, 1.5])
    # equal weights of 1/8 pin only the heaviest-node fallback
    assert len(udf.zero_set_nodes(g, center[None])) == 1


def test_eval_and_probe():
    res, pos = _plane_result()
    assert udf.eval_udf(res, pos[100]) == res.u.flat()[100]
    assert udf.eval_udf(res, np.array([0.031, -0.2, Z0])) <= res.u.spacing
    probe = udf.line_probe(res, [0.1, 0.1, -0.4], [0.1, 0.1, 0.4], 41)
    vals = np.array([v for _, v in probe])
    k = int(np.argmin(vals))
    assert vals[k] <= res.u.spacing
    assert np.all(np.diff(vals[:k + 1]) <= 1e-9) and np.all(np.diff(vals[k:]) >= -1e-9)
    ends = udf.line_probe(res, [0, 0, -0.3], [0, 0, 0.3], 2)
    assert [s for s, _ in ends] == [0.0, 1.0]
    with pytest.raises(ValueError):
        udf.line_probe(res, [0, 0, 0], [1, 0, 0], 1)


def test_probe_csv(tmp_path):
    res, _ = _plane_result(9)
    udf.write_probe_csv(tmp_path / "p.csv", udf.line_probe(res, [0, 0, -0.4], [0, 0, 0.4], 5))
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "parameter,value" and len(lines) == 6


@pytest.fixture(scope="module")
def sphere_run():
    cloud = sphere_cloud(800, seed=2)
    return run_udf(cloud, Config(grid_resolution=32), seed=0)


def test_sphere_udf_accuracy_and_eikonal(sphere_run):
    r = sphere_run
    res, cloud = r.udf, r.cloud
    pos = res.u.node_positions()
    truth = shapes.sphere_udf(pos, radius=0.4)
    shell = truth > res.u.spacing
    assert np.max(np.abs(res.u.flat() - truth)[shell]) <= 2 * res.u.spacing
    assert 0.85 <= res.diagnostics["eikonal_median"] <= 1.15
    assert np.all(res.u.flat() >= 0)
    x = np.random.default_rng(0).uniform(-0.45, 0.45, (500, 3))
    assert np.max(np.abs(udf.eval_udf(res, x) - shapes.sphere_udf(x, radius=0.4))) <= 2 * res.u.spacing
    # evaluation at the samples is within a spacing of zero
    assert np.max(udf.eval_udf(res, cloud.points)) <= res.u.spacing


def test_tangent_probe_is_positive(sphere_run):
    probe = udf.line_probe(sphere_run.udf, [-0.45, 0.45, 0.0], [0.45, 0.45, 0.0], 50)
    assert all(v > 0 for _, v in probe)
