import report


def pytest_terminal_summary(terminalreporter):
    if not report.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(report.LINES):
        terminalreporter.write_line(report.LINES[number])
