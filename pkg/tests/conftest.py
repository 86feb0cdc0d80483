import re
import time
from dataclasses import dataclass

import pytest

from osllab.suites import run_suite

_CRITERION = re.compile(r"test_criterion_(\d+)")
_outcomes = {}


@dataclass
class SuiteRun:
    report: object
    text: str
    seconds: float


@pytest.fixture(scope="session")
def all_suite():
    start = time.perf_counter()
    report = run_suite("all")
    return SuiteRun(report, report.text(), time.perf_counter() - start)


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if m is None:
        return
    crit = int(m.group(1))
    if report.outcome == "failed":
        _outcomes[crit] = "FAIL"
    elif report.when == "call":
        _outcomes.setdefault(crit, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_outcomes):
        terminalreporter.write_line(f"{_outcomes[crit]} criterion {crit}")
