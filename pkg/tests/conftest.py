import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from amsa.marketdata import SynthParams, synth_data  # noqa: E402


@pytest.fixture(scope="session")
def two_day_data():
    return synth_data(11, SynthParams(days=2, volatility=0.03, trade_rate=2.0))


@pytest.fixture(scope="session")
def ten_day_data():
    return synth_data(5, SynthParams(days=10, volatility=0.03, trade_rate=1.0))


# acceptance tests append (number, passed, text); shown after the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, text in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {text}")
