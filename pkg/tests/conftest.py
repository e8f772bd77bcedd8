from pathlib import Path

import numpy as np
import pytest

DATA_DIR = Path(__file__).parent / "data"

# Filled by tests/test_acceptance.py; printed at the end of the session.
ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def iris_path():
    return DATA_DIR / "iris.csv"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
