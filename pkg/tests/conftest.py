import numpy as np
import pytest

from rydberg_ghz.dynamics import build_hamiltonian
from rydberg_ghz.lattice import LatticeSpec, lattice_interactions


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def terms_for(extents, spacing=1.5):
    spec = LatticeSpec(tuple(extents), spacing)
    table = lattice_interactions(spec)
    return spec, table, build_hamiltonian(table)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_lines():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
