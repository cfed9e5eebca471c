import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_GATE_LINES: list[str] = []


@pytest.fixture
def gate():
    """Record one pass/fail line for an acceptance criterion, then assert it."""
    def record(number, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
        _GATE_LINES.append(line)
        print(line)
        assert passed, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _GATE_LINES:
        terminalreporter.section("acceptance gate")
        for line in _GATE_LINES:
            terminalreporter.write_line(line)
