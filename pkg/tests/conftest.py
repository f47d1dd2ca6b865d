import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_names: dict[int, str] = {}
_by_test: dict[str, int] = {}
_outcomes: dict[int, list[str]] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            number, name = mark.args
            _names[number] = name
            _by_test[item.nodeid] = number
            _outcomes.setdefault(number, [])


def pytest_runtest_logreport(report):
    number = _by_test.get(report.nodeid)
    if number is None:
        return
    if report.when == "call" or report.outcome != "passed":
        _outcomes[number].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _names:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_names):
        outcomes = _outcomes[number]
        if not outcomes:
            verdict = "NOT RUN"
        elif all(o == "passed" for o in outcomes):
            verdict = "PASS"
        else:
            verdict = "FAIL"
        terminalreporter.write_line(f"ACCEPTANCE {number:>2} {verdict:<7} {_names[number]}")
