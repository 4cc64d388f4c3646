import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# One pass/fail line per acceptance criterion, printed after the run.
# Tests opt in with ``@pytest.mark.criterion(n, "title")``.
_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by a test")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, [title, True, []])
    if call.excinfo is not None and not call.excinfo.errisinstance(
            __import__("pytest").skip.Exception):
        entry[1] = False
    if call.when == "call":
        entry[2].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok, names = _criteria[number]
        state = "PASS" if ok and names else ("FAIL" if not ok else "NOT RUN")
        terminalreporter.write_line(f"criterion {number:>2} {state:<7} {title}")
