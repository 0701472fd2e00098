import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cplab.core import LpInstance

settings.register_profile("cplab", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("cplab")

_ACCEPTANCE = []


@pytest.fixture
def segment():
    """m=2, n=1: the cell ``++`` is ``0 < x < 1``."""
    return LpInstance(np.array([[1.0], [-1.0]]), np.array([0.0, -1.0]), np.array([1.0]))


@pytest.fixture
def box():
    """``[-1, 1]^2`` as the ``++++`` cell of ``A = [I; -I]``, ``b = -1``."""
    A = np.vstack([np.eye(2), -np.eye(2)])
    return LpInstance(A, -np.ones(4), np.array([1.0, 0.3]))


@pytest.fixture
def acceptance_line():
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
