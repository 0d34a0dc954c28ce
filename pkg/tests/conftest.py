import numpy as np
import pytest

from poissonchaos.measure import AtomicSpace, BoxSpace

# filled by test_acceptance, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def unit_atom():
    """One atom of weight one: ``lambda(B) = 1``."""
    return AtomicSpace.from_atoms([["b", 1.0]])


@pytest.fixture
def three_atoms():
    return AtomicSpace.from_atoms([["a", 0.5, 1.0], ["b", 0.7, 2.0], ["c", 0.3, -1.5]])


@pytest.fixture
def unit_square():
    return BoxSpace(np.array([[0.0, 1.0], [0.0, 1.0]]))


@pytest.fixture
def unit_interval():
    return BoxSpace(np.array([[0.0, 1.0]]))
