import numpy as np
import pytest
from hypothesis import settings

from cdfsched.fading import ChannelModel, RateFunction

settings.register_profile("default", max_examples=200, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def rayleigh():
    return ChannelModel.rayleigh(1.0)


@pytest.fixture
def nak4():
    return ChannelModel.nakagami(4, 1.0)


@pytest.fixture
def shannon():
    return RateFunction.shannon()


# acceptance summary: one line per criterion at the end of the run
_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
