"""Collects the acceptance suite's one-line verdicts and prints them after the run."""

import pytest

ACCEPTANCE_LINES: dict = {}


@pytest.fixture(scope="session")
def acceptance_log():
    def record(number: int, title: str, passed: bool, detail: str):
        verdict = "PASS" if passed else "FAIL"
        ACCEPTANCE_LINES[number] = f"[{verdict}] {number:>2}. {title}: {detail}"
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
