from __future__ import annotations

import math

import pytest

from gameopt.market import MarketParams

# one line per acceptance criterion, filled by test_acceptance and echoed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def hand_market() -> MarketParams:
    """``n = 1`` market with up factor 2, down factor 1/2, ``r = 0`` and ``p = 1/3``."""
    return MarketParams(z=100.0, r=0.0, kappa=math.log(2.0), T=1.0)


@pytest.fixture
def market() -> MarketParams:
    return MarketParams(z=100.0, r=0.05, kappa=0.3, T=1.0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
