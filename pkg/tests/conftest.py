"""Acceptance bookkeeping: one PASS/FAIL line per criterion in the terminal summary."""
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

_OUTCOMES: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    prev = _OUTCOMES.get(number, (title, "PASS", []))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        state = "PASS" if report.outcome == "passed" else (
            "SKIP" if report.outcome == "skipped" else "FAIL")
        if prev[1] == "FAIL":
            state = "FAIL"
        details = prev[2] + [v for k, v in report.user_properties if k == "detail"]
        _OUTCOMES[number] = (title, state, details)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        title, state, details = _OUTCOMES[number]
        suffix = f" ({'; '.join(details)})" if details else ""
        terminalreporter.write_line(f"criterion {number} [{state}] {title}{suffix}")
