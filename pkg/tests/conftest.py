import numpy as np
import pytest
from hypothesis import settings

from mmot.measures import DiscreteMarginal, discretize_density

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def uniform(n, bounds=(0.0, 1.0)):
    return discretize_density(lambda x: np.ones_like(x), bounds, n)


def atoms(points):
    return DiscreteMarginal.uniform_on(points)


@pytest.fixture
def two_point():
    return [atoms([0.0, 1.0]), atoms([0.0, 1.0])]


@pytest.fixture
def three_point_m3():
    return [atoms([-1.0, 0.0, 1.0])] * 3


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
