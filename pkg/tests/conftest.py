import numpy as np
import pytest

from rbpinn.refsolver import ManufacturedSolution, manufactured_db


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running reproduction experiments")


@pytest.fixture(scope="session")
def ms2():
    return ManufacturedSolution()


@pytest.fixture(scope="session")
def small_db(ms2):
    return manufactured_db(ms2, (9, 7), np.linspace(0.0, 1.0, 5))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
