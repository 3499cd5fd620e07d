"""Collects the one-line verdicts of the acceptance criteria and prints them after the run."""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda text: int(text.split()[1])):
            terminalreporter.write_line(line)
