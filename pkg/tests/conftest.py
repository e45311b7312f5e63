import numpy as np
import pytest

from irtps.core import Placement, ring_lights
from irtps.scene import EnvironmentBox, SamplerConfig, Scene, make_sphere


@pytest.fixture(scope="session")
def small_sphere_scene():
    pl = Placement()
    obj = make_sphere((24, 24), pl, 0.9, (0.8, 0.8, 0.8))
    return Scene(EnvironmentBox(), obj, ring_lights(), pl)


@pytest.fixture(scope="session")
def small_dataset(small_sphere_scene):
    from irtps.raytrace import render_dataset

    return render_dataset(small_sphere_scene, ring_lights(), SamplerConfig(spp=16, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config._acceptance_lines.append(line)
        print(line)
        assert ok, line
    return record
