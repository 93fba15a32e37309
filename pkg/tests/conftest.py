"""Pytest wiring: acceptance-summary reporting and shared fixtures."""
from __future__ import annotations

import re

import numpy as np
import pytest

# nodeid -> ("NN", "label", outcome)
_ACCEPTANCE: dict[str, tuple[str, str, str]] = {}
_CRITERION_RE = re.compile(r"test_criterion_(\d+)_(\w+)")


def pytest_runtest_logreport(report):
    m = _CRITERION_RE.search(report.nodeid)
    if not m:
        return
    num, label = m.group(1), m.group(2).replace("_", " ")
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _ACCEPTANCE[report.nodeid] = (num, label, outcome)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, label, outcome in sorted(_ACCEPTANCE.values()):
        terminalreporter.write_line(f"criterion {num} ({label}): {outcome}")


@pytest.fixture
def rng():
    return np.random.default_rng(0)
