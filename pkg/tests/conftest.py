import numpy as np
import pytest

from contact_stokes.equilibrium import PhysicalParams, build_equilibrium
from contact_stokes.fem import build_mesh
from contact_stokes.solver import Simulation

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def eq_half():
    return build_equilibrium(PhysicalParams(gamma_jump=0.5))


@pytest.fixture(scope="session")
def small_sim(eq_half):
    mesh = build_mesh(eq_half, 8)
    return Simulation(eq_half, mesh)


@pytest.fixture(scope="session")
def mode_eta(eq_half):
    def make(x, amp=0.02, k=1):
        return amp * eq_half.min_zeta0 * np.cos(k * np.pi * (x + 1.0) / 2.0)

    return make
