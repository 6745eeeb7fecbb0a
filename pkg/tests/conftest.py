"""Per-criterion PASS/FAIL summary for the acceptance suite."""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "setup" and rep.outcome != "passed":
        status = "FAIL" if rep.failed else "SKIP"
    elif rep.when == "call":
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    else:
        return
    # parametrized criteria fail if any case fails
    if _RESULTS.get(number, ("", ""))[1] != "FAIL":
        _RESULTS[number] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, status = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}")
