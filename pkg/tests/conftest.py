"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""
from collections import defaultdict

import pytest

_outcomes = defaultdict(list)  # criterion -> [(nodeid, passed, detail)]


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        if report.failed and not detail:
            detail = str(report.longrepr).strip().splitlines()[-1][:160]
        _outcomes[marker.args[0]].append((item.name, report.passed, detail))


@pytest.fixture
def detail(request):
    """Attach a one-line measurement to the criterion summary."""
    def add(text):
        request.node.user_properties.append(("detail", text))
    return add


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        runs = _outcomes[n]
        ok = all(passed for _, passed, _ in runs)
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}")
        for name, passed, text in runs:
            mark = "ok  " if passed else "FAIL"
            terminalreporter.write_line(f"    {mark} {name}: {text}")
