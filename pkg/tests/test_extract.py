import numpy as np
import pytest

from vad import extract as X
from vad import grid as G
from vad.io import TriangleMesh


def _sphere_sdf(n=33, r=0.3):
    g = G.make_grid(n)
    return g.with_flat(np.linalg.norm(g.node_positions(), axis=1) - r), g


def test_sphere_sdf_zero_level():
    sdf, g = _sphere_sdf()
    m = X.marching_cubes(sdf, 0.0, signed=True)
    radii = np.linalg.norm(m.vertices, axis=1)
    assert np.max(np.abs(radii - 0.3)) <= g.spacing
    assert X.euler_characteristic(m) == 2 and X.is_closed(m)
    # outward winding: positive enclosed volume
    assert X.signed_volume(m) == pytest.approx(4 / 3 * np.pi * 0.3 ** 3, rel=0.02)


def test_unsigned_offsets_give_two_shells():
    sdf, g = _sphere_sdf()
    u = sdf.with_flat(np.abs(sdf.flat()))
    m = X.marching_cubes(u, 0.1)
    parts = X.split_components(m)
    assert X.components(m)[1] == 2 and len(parts) == 2
    radii = sorted(np.linalg.norm(p.vertices, axis=1).mean() for p in parts)
    assert radii[0] == pytest.approx(0.2, abs=1.5 * g.spacing)
    assert radii[1] == pytest.approx(0.4, abs=1.5 * g.spacing)
    for p in parts:
        assert X.euler_characteristic(p) == 2


def test_iso_errors():
    sdf, _ = _sphere_sdf(9)
    with pytest.raises(X.IsoOutOfRange):
        X.marching_cubes(sdf, 10.0, signed=True)
    with pytest.raises(X.DegenerateIso):
        X.marching_cubes(sdf.with_flat(np.abs(sdf.flat())), 0.0)


def test_exact_zeros_do_not_break_the_surface():
    sdf, g = _sphere_sdf(33, 0.25)
    d = sdf.flat().copy()
    # pin a band of nodes to exactly zero, as the integration does
    d[np.abs(d) < 0.3 * g.spacing] = 0.0
    m = X.marching_cubes(sdf.with_flat(d), 0.0, signed=True)
    assert X.is_closed(m) and X.euler_characteristic(m) == 2


def test_topology_helpers_on_tetrahedron():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    t = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    m = TriangleMesh(v, t)
    assert X.euler_characteristic(m) == 2 and X.is_closed(m)
    assert X.signed_volume(m) == pytest.approx(1 / 6)
    assert not X.is_closed(TriangleMesh(v, t[:3]))
