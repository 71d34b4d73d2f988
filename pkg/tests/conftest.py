import math
import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=25, derandomize=True)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_RESULTS_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS_KEY] = {}


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion."""
    results = request.config.stash[_RESULTS_KEY]

    def record(number: int, passed: bool, detail: str) -> bool:
        results[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])


@pytest.fixture(scope="session")
def small_setup():
    """32x32 lattice, centres within 8 mm, 16 sensors on a 12 mm circle."""
    from patsample.geometry import ImageGrid, SensorGeometry, TimeGrid, signal_window

    grid = ImageGrid(1.0, 32, support_radius=8.0)
    geom = SensorGeometry(12.0, 16, start_angle=0.05)
    lo, hi = signal_window(geom, grid)
    tgrid = TimeGrid.spanning(0.5, lo, hi)
    return grid, geom, tgrid


@pytest.fixture(scope="session")
def small_op(small_setup):
    from patsample.wave import build_forward

    grid, geom, tgrid = small_setup
    return build_forward(geom, tgrid, grid)
