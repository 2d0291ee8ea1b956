import numpy as np
import pytest

from vad import shapes
from vad.core import PointCloud, normalize_to_unit_box


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def sphere_cloud(n, seed=0):
    p, nrm = shapes.sphere(n, seed=seed)
    return normalize_to_unit_box(PointCloud(p, nrm))


def plane_cloud(n, seed=0):
    """Points on z = 0 inside the unit box (kept unnormalized: a planar cloud
    has no 3D bounding box)."""
    p, nrm = shapes.plane(n, seed=seed)
    return PointCloud(p, nrm)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])
