import pytest

_OUTCOMES: dict[int, list[bool]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    # a failing fixture counts against the criterion as well
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _OUTCOMES.setdefault(int(marker.args[0]), []).append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        verdict = "PASS" if all(_OUTCOMES[n]) else "FAIL"
        terminalreporter.write_line(f"ACCEPTANCE {n}: {verdict}")
