"""Shared fixtures: the cached reference run and the per-criterion summary."""

import os
from pathlib import Path

import pytest

from glvc.reference import Reference

REPO = Path(__file__).resolve().parents[1]


def reference_root() -> Path:
    return Path(os.environ.get("GLVC_REFERENCE_ROOT", REPO / ".cache"))


@pytest.fixture(scope="session")
def reference():
    """Reference artifacts; the first run trains them (tens of minutes), later runs load."""
    ref = Reference(reference_root())
    for name in ("full", "nomem", "factorized", "uniform", "intra", "full_ft"):
        ref.codec(name)
    return ref


def pytest_terminal_summary(terminalreporter):
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py::test_criterion_" not in rep.nodeid:
                continue
            if outcome != "error" and rep.when != "call":
                continue
            name = rep.nodeid.split("::")[-1]
            number = int(name.split("_")[2])
            detail = "; ".join(str(v) for k, v in rep.user_properties if k == "measured")
            status = "PASS" if outcome == "passed" else "FAIL"
            lines[number] = f"criterion {number:2d} {status}  {name}" + (f"  [{detail}]" if detail else "")
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
