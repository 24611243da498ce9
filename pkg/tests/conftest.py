"""Reports one [PASS]/[FAIL] line per acceptance criterion after the run."""

import pytest

_results: dict[str, bool] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(name): labels a test as a release acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None and report.when == "call":
        _results[marker.args[0]] = report.passed


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, passed in _results.items():
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}")
