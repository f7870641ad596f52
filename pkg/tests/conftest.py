import numpy as np
import pytest

from fewshot.data import make_synthetic


@pytest.fixture(scope="session")
def small_ds():
    """6/5/5 classes x 30 images of 32x32."""
    return make_synthetic((6, 5, 5), 30, 32, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdict lines, one per criterion, after the run."""
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.LINES:
            terminalreporter.write_line(line)
