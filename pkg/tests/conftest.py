import numpy as np
import pytest
from hypothesis import settings

from helpers import ACCEPTANCE_LINES

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance check (minutes)")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
