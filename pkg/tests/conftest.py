"""Acceptance summary: one PASS/FAIL line per numbered criterion."""

import pytest

_RESULTS = {}
_DETAILS = {}
_TITLES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args[0]))
            _TITLES[mark.args[0]] = mark.args[1]


@pytest.fixture
def report(request):
    """Attach a short measurement to the criterion line of the current test."""
    mark = request.node.get_closest_marker("criterion")

    def add(text):
        _DETAILS.setdefault(mark.args[0], []).append(text)
    return add


def pytest_runtest_logreport(report):
    number = dict(report.user_properties).get("criterion")
    if number is None:
        return
    if report.when == "call" or report.failed:
        ok = report.passed and _RESULTS.get(number, True)
        _RESULTS[number] = ok
    elif report.skipped:
        _RESULTS[number] = False


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_TITLES):
        if number not in _RESULTS:
            status = "NOT RUN"
        else:
            status = "PASS" if _RESULTS[number] else "FAIL"
        detail = "; ".join(_DETAILS.get(number, []))
        line = f"criterion {number}: {status}  {_TITLES[number]}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
