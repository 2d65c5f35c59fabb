import numpy as np
import pytest

from kinn import kernels


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    """Run a test once per available kernel backend."""
    previous = kernels.BACKEND
    kernels.use(request.param)
    yield request.param
    kernels.use(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(20240617)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
