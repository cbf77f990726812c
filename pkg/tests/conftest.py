"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""
from collections import defaultdict

import pytest

_results = defaultdict(list)  # criterion number -> [(title, test name, passed, detail, seconds)]


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion this test checks")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    props = dict(item.user_properties)
    _results[number].append((title, item.name, report.passed, props.get("detail", ""), report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_results):
        rows = _results[number]
        ok = all(r[2] for r in rows)
        seconds = sum(r[4] for r in rows)
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {rows[0][0]} ({seconds:.1f}s)")
        for _, name, passed, detail, _ in rows:
            tr.write_line(f"         {'ok  ' if passed else 'FAIL'} {name}: {detail}")
