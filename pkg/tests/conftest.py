import math

import mpmath
import numpy as np
import pytest

from kahlerlab.geometry import poincare_instance

mpmath.mp.dps = 40


def poincare_log_moment(k: int, j: int) -> float:
    """``log m_j`` for the weight ``2^(1-k) (1-s)^(2k-2)`` on the unit disc (mpmath Beta)."""
    val = mpmath.log(mpmath.pi) + (1 - k) * mpmath.log(2) + mpmath.log(mpmath.beta(j + 1, 2 * k - 1))
    return float(val)


def poincare_kernel(k: int, s):
    return 2.0 ** (k - 1) * (2 * k - 1) / math.pi * (1 - np.asarray(s)) ** (-2 * k)


@pytest.fixture(scope="session")
def disc():
    return poincare_instance(1.0)


# one PASS/FAIL line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list = []


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
