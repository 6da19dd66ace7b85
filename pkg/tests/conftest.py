import pytest

from ptfem.geometry import DomainSpec, Subdomain

LSHAPE = [[0, 0], [1, 0], [1, 1], [-1, 1], [-1, -1], [0, -1]]


@pytest.fixture
def square():
    return DomainSpec([[0, 0], [1, 0], [1, 1], [0, 1]], [Subdomain("o", (0, 1, 2, 3))])


@pytest.fixture
def lshape():
    return DomainSpec(LSHAPE, [Subdomain("a", (0, 1, 2, 3, 4, 5))])


@pytest.fixture
def lshape_nn():
    return DomainSpec(LSHAPE, [Subdomain("a", (0, 1, 2, 3, 4, 5))],
                      boundary_tags={"neumann": [[0, 1], [5, 0]]})


@pytest.fixture
def split_square():
    """Unit square cut at x = 1/2 into a left and a right material."""
    return DomainSpec([[0, 0], [.5, 0], [1, 0], [1, 1], [.5, 1], [0, 1]],
                      [Subdomain("L", (0, 1, 4, 5)), Subdomain("R", (1, 2, 3, 4))])


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """record(n, ok, detail): one PASS/FAIL line per acceptance criterion."""
    def record(n, ok, detail):
        line = f"ACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
