import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record a PASS/FAIL line for an acceptance criterion, then assert it."""

    def check(number, title: str, ok: bool, detail: str = ""):
        status = "PASS" if ok else "FAIL"
        ACCEPTANCE_LINES.append(f"{status} criterion {number}: {title}" + (f" ({detail})" if detail else ""))
        assert ok, f"criterion {number}: {title} ({detail})"

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: s.split("criterion ", 1)[1]):
            terminalreporter.write_line(line)
