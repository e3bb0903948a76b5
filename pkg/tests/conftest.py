import numpy as np
import pytest

from heisenlab.lattice import LatticeSpec, build_lattice

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


@pytest.fixture(scope="session")
def small_lattices():
    specs = [
        "chain:2:open", "chain:5:open", "chain:6:periodic", "chain:7:periodic",
        "box2d:3x3:periodic", "box2d:2x3:open", "box3d:2x2x2:periodic",
    ]
    return [build_lattice(LatticeSpec.parse(s)) for s in specs]


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
