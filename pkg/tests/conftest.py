import pytest

_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): test belongs to an acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or (report.when != "call" and report.passed):
        return
    number, title = mark.args
    entry = _outcomes.setdefault(number, [title, [], []])
    entry[1].append("skipped" if report.skipped else "passed" if report.passed else "failed")
    entry[2] += [str(v) for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        title, results, details = _outcomes[number]
        if "failed" in results:
            status = "FAIL"
        elif "skipped" in results:
            status = "SKIP"
        else:
            status = "PASS"
        line = f"criterion {number}: {status}  {title}"
        if details:
            line += "  [" + "; ".join(details) + "]"
        terminalreporter.write_line(line)
