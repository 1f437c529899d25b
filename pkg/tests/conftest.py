"""Prints one pass/fail line per acceptance criterion at the end of the run."""

_acceptance: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if report.failed:
        _acceptance[name] = "FAIL"
    elif report.when == "call" and name not in _acceptance:
        _acceptance[name] = "PASS"
    elif report.skipped:
        _acceptance[name] = "SKIP"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    from test_acceptance import CRITERIA

    terminalreporter.section("acceptance criteria")
    for name, label in CRITERIA.items():
        status = _acceptance.get(name, "NOT RUN")
        terminalreporter.write_line(f"{status:7} {label}")
