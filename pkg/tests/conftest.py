import numpy as np
import pytest

from slabdecomp import _backend


@pytest.fixture(params=_backend.available())
def backend(request, monkeypatch):
    """Run a test once per importable kernel backend."""
    monkeypatch.setattr(_backend, "kernels", _backend.get(request.param))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_MEASUREMENTS = []


@pytest.fixture
def measure(request):
    """Record a named measurement; all are listed in the terminal summary."""
    def record(name, value):
        _MEASUREMENTS.append((request.node.name, name, value))
    return record


def pytest_terminal_summary(terminalreporter):
    if _MEASUREMENTS:
        terminalreporter.section("acceptance measurements")
        for test, name, value in _MEASUREMENTS:
            terminalreporter.write_line(f"{test}: {name} = {value}")
