import functools

import numpy as np
import pytest
from hypothesis import settings

from lckmp.config import ScenarioConfig, run_pipeline


settings.register_profile("repro", derandomize=True, print_blob=True)
settings.load_profile("repro")


@functools.lru_cache(maxsize=None)
def scenario(name, constrained=True):
    """Pipeline result for a bundled scenario, computed once per session."""
    return run_pipeline(ScenarioConfig.load(name), constrained=constrained)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_OUTCOMES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    ok = call.excinfo is None
    prev = _OUTCOMES.get(number, (title, True))
    _OUTCOMES[number] = (title, prev[1] and ok)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        title, ok = _OUTCOMES[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}")
