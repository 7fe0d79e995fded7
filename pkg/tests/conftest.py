import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lossyckpt.sparse import poisson3d

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# acceptance lines collected during the run, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def poisson8():
    A = poisson3d(8)
    return A, A.matvec(np.ones(A.nrows))


@pytest.fixture(scope="session")
def poisson16():
    A = poisson3d(16)
    return A, A.matvec(np.ones(A.nrows))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
