import numpy as np
import pytest

from ensdiv.distributions import GaussianSpec

# PASS/FAIL lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def study_pair(d: int, truncated: bool = True):
    """The two isotropic Gaussians used throughout the experiments."""
    box = (0.0, 1.0) if truncated else None
    return (
        GaussianSpec.isotropic(0.7, 0.1, d, box),
        GaussianSpec.isotropic(0.3, 0.3, d, box),
    )


STUDY_F1 = {"mean": 0.7, "covariance": 0.1, "box": [0.0, 1.0]}
STUDY_F2 = {"mean": 0.3, "covariance": 0.3, "box": [0.0, 1.0]}
