from fractions import Fraction

import pytest

from prophet_match.core import BatchStructure, DiscreteJointDistribution, Graph, Instance

D = DiscreteJointDistribution

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def triangle():
    return Graph(3, ((0, 1), (1, 2), (0, 2)))


@pytest.fixture
def unit_triangle_vertex(triangle):
    return Instance.independent(triangle, BatchStructure.vertex([0, 1, 2]), [D.point([1])] * 3)


@pytest.fixture
def half_path():
    """Path a-b-c-d under vertex arrival whose offline marginals are all 1/2."""
    g = Graph(4, ((0, 1), (1, 2), (2, 3)))
    dists = [D.two_point(2, Fraction(1, 2)), D.point([3]), D.point([2])]
    return Instance.independent(g, BatchStructure.vertex([0, 1, 2, 3]), dists)
