import re

_results: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criterion")
    config.addinivalue_line("markers", "slow: long-running statistical test")


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    key = f"{int(m.group(1)):2d} {m.group(2)}"
    if report.when == "call" or report.outcome != "passed":
        _results[key] = "FAIL" if report.failed else ("PASS" if report.passed else report.outcome.upper())


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_results):
        terminalreporter.write_line(f"{_results[key]}  criterion {key}")
