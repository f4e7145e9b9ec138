import numpy as np
import pytest

from qatlab.classical import preset
from qatlab.qat import QatContext
from qatlab.wavegrid import Grid


@pytest.fixture(scope="session")
def dho_ctx():
    """Caldirola-Kanai oscillator, gamma=0.2, omega=1; basis computed past the first u2 zero."""
    return QatContext.build(preset("damped_harmonic", gamma=0.2, omega=1.0), 2.2, -0.1)


@pytest.fixture(scope="session")
def dp_ctx():
    return QatContext.build(preset("damped_particle", gamma=1.0), 2.2, -0.1)


@pytest.fixture(scope="session")
def free_ctx():
    return QatContext.build(preset("free"), 2.2, -0.1)


@pytest.fixture(scope="session")
def forced_ctx():
    return QatContext.build(preset("forced_damped_harmonic", gamma=0.2, omega=1.0), 1.2, -0.1)


@pytest.fixture(scope="session")
def grid_cn():
    """Box used against Crank-Nicolson: boundary mass stays far below 1e-8."""
    return Grid(-16.0, 16.0, 1024)


@pytest.fixture(scope="session")
def grid_dense():
    """Box for dense-matrix checks."""
    return Grid(-16.0, 16.0, 256)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; lines are echoed in the terminal summary."""
    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _CRITERIA.append(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
