from pathlib import Path

import numpy as np
import pytest

FIXTURES = Path(__file__).parent / "fixtures"

# filled by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture
def fixtures():
    return FIXTURES


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def dominant(rng, n):
    return rng.uniform(-1.0, 1.0, (n, n)) + n * np.eye(n)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
