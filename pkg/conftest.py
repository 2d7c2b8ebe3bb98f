"""Shared pytest plumbing: the acceptance-criteria scoreboard.

Acceptance tests register one verdict per criterion through the ``ac_log``
fixture; the terminal summary prints one line per criterion so a run can be
audited at a glance.  Criteria whose tests did not run are shown as such
rather than silently omitted.
"""
from __future__ import annotations

import pytest

_CRITERIA = [
    "AC-1", "AC-2", "AC-3", "AC-4", "AC-5", "AC-6",
    "AC-7", "AC-8", "AC-9", "AC-10", "AC-11",
]
_RESULTS: dict[str, tuple[bool, str]] = {}


class AcceptanceLog:
    """Collects per-criterion verdicts for the end-of-run summary."""

    def record(self, name: str, passed: bool, detail: str) -> None:
        if name not in _CRITERIA:
            raise ValueError(f"unknown criterion {name!r}")
        _RESULTS[name] = (bool(passed), detail)


@pytest.fixture(scope="session")
def ac_log() -> AcceptanceLog:
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name in _CRITERIA:
        if name in _RESULTS:
            passed, detail = _RESULTS[name]
            verdict = "PASS" if passed else "FAIL"
        else:
            verdict, detail = "NOT RUN", ""
        line = f"{name}: {verdict}"
        if detail:
            line += f"  [{detail}]"
        tr.write_line(line)
