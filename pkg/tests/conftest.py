import numpy as np
import pytest

from weighted_rml.darcy import DarcyProblem, PermTransform
from weighted_rml.mesh import GridSpec
from weighted_rml.prior import MaternSpec, build_matern_prior

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def grid10():
    return GridSpec(10, 10)


@pytest.fixture(scope="session")
def matern10(grid10):
    return build_matern_prior(MaternSpec(1.12, 0.12, grid10))


@pytest.fixture(scope="session", params=PermTransform.KINDS)
def darcy10(request, grid10):
    v = 2.0 if request.param == "lognormal" else 0.7
    return DarcyProblem(grid10, PermTransform(request.param), v)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


