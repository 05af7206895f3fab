"""Shared test plumbing: the acceptance-line recorder.

test_acceptance.py records one PASS/FAIL line per checked guarantee;
the lines are replayed in their own terminal section after the run so
the verdicts are visible without -s.
"""

import pytest

_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance():
    """Returns a recorder; each recorded line is echoed after the run."""

    def record(line: str) -> None:
        _LINES.append(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _LINES:
        terminalreporter.section("acceptance checks")
        for line in _LINES:
            terminalreporter.write_line(line)
