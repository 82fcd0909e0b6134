from __future__ import annotations

import sys

import pytest

from bilipext.metric_core import MetricSpace
from bilipext.space_gallery import grid_space


def path_space(n: int, h: float = 1.0) -> MetricSpace:
    return MetricSpace(range(n), [(i, i + 1, h) for i in range(n - 1)], h)


@pytest.fixture
def abc():
    return path_space(3)


@pytest.fixture
def grid3():
    return grid_space(2, 3)


@pytest.fixture(scope="session")
def grid9():
    return grid_space(3, 9)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
