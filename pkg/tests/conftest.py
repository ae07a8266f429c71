import numpy as np
import pytest

from cble.levy_env import AtomJumps, DoubleExponentialJumps, LevyTriplet

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def brownian():
    return LevyTriplet(0.0, 1.0)


@pytest.fixture
def jumpy():
    return LevyTriplet(0.1, 0.8, (AtomJumps(((1.0, 0.5), (0.5, -1.5))),
                                  DoubleExponentialJumps(0.5, 3.0, 0.7, 2.0)))


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
