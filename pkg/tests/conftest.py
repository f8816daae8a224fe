import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion name -> {"outcomes": [...], "notes": [...]}, in first-seen order
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion the test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    entry = _CRITERIA.setdefault(marker.args[0], {"outcomes": [], "notes": []})
    if report.when == "call" or (report.when == "setup" and not report.passed):
        entry["outcomes"].append(report.outcome)
    if report.when == "call":
        entry["notes"] += [f"{k}={v}" for k, v in item.user_properties]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, entry in _CRITERIA.items():
        outcomes = entry["outcomes"]
        ok = bool(outcomes) and all(o == "passed" for o in outcomes)
        line = f"{'PASS' if ok else 'FAIL'}  {name}"
        if entry["notes"]:
            line += "  (" + ", ".join(entry["notes"]) + ")"
        tr.write_line(line)
