import report


def pytest_terminal_summary(terminalreporter):
    out = report.lines()
    if out:
        terminalreporter.section("acceptance criteria")
        for line in out:
            terminalreporter.write_line(line)
