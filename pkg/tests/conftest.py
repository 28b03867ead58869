import numpy as np
import pytest

from beadspring.diagnostics import choose_lyapunov_params
from beadspring.potentials import power_law, verify_assumptions
from beadspring.spectral_fluid import FluidParams, default_mode_set


@pytest.fixture(scope="session")
def ms():
    return default_mode_set()


@pytest.fixture(scope="session")
def fp():
    return FluidParams()


@pytest.fixture(scope="session")
def lj():
    return power_law(1, 12)


@pytest.fixture(scope="session")
def lj_cert(lj):
    return verify_assumptions(lj)


@pytest.fixture(scope="session")
def lj_lyap(lj_cert, fp, ms):
    return choose_lyapunov_params(lj_cert.gamma, fp, ms, lj_cert.R0, 0.1)


@pytest.fixture
def gen():
    return np.random.default_rng(20240611)


ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance():
    """Record ``(number, title, passed, detail)`` for the end-of-run summary."""

    def record(number, title, passed, detail=""):
        ACCEPTANCE[number] = (title, bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {number:2d} {title}: {detail}")
