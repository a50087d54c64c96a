"""Collects results of tests marked ``criterion`` and prints one line per criterion."""

import pytest

_RESULTS: dict[tuple[int, str], bool] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or rep.failed:
        key = tuple(marker.args)
        _RESULTS[key] = _RESULTS.get(key, True) and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), ok in sorted(_RESULTS.items()):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {number:2d}  {title}")
