import math
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from spdmix.pricing import MarketContext  # noqa: E402


@pytest.fixture
def ctx():
    """Market of the smile experiment: S=1365, r=4.5%, d=2.5%, 30 days."""
    return MarketContext(spot=1365.0, rate=0.045, dividend_yield=0.025, tau=30 / 365)


@pytest.fixture
def sqrt_tau(ctx):
    return math.sqrt(ctx.tau)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def criterion_log():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def log(number: int, ok: bool, detail: str) -> None:
        line = f"CRITERION {number:>2} {'PASS' if ok else 'FAIL'}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return log


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
