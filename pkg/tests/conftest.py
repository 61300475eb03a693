import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("neuralsim", deadline=None, max_examples=60)
settings.load_profile("neuralsim")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import LINES
    except ImportError:
        return
    if LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])
