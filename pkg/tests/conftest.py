"""Collects acceptance verdicts and prints one line per criterion."""

VERDICTS = {}


def record(number, passed, detail):
    VERDICTS[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        passed, detail = VERDICTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")
