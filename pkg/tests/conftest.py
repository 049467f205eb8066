import numpy as np
import pytest

from contextew import _fallback
from contextew._backend import COMPILED, kernels
from contextew.core import EnvironmentSpec, FixedTheta, ProblemDims, TruncatedGaussian

DEFAULT_THETA = np.array([[0.5, 0.2], [-0.3, 0.4], [0.1, -0.6]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_dims():
    return ProblemDims(d=2, K=3, T=10_000)


@pytest.fixture(scope="session")
def default_env(default_dims):
    contexts = TruncatedGaussian([0.3, 0.1], np.diag([0.09, 0.09]), 1.0)
    return EnvironmentSpec(contexts, FixedTheta(DEFAULT_THETA), default_dims, name="default")


BACKENDS = [pytest.param(_fallback, id="fallback")]
if COMPILED:
    BACKENDS.insert(0, pytest.param(kernels, id="compiled"))


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture(scope="session")
def default_theta():
    return DEFAULT_THETA.copy()


ACCEPTANCE_LINES = []


class AcceptanceRecorder:
    """Records one PASS/FAIL line per criterion, then asserts it."""

    def check(self, number, title, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number:2d}  {title}  [{detail}]"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceRecorder()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
