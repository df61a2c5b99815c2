"""Shared pytest hooks.

The acceptance tests register one summary line per criterion; echoing
them here keeps the lines visible in a normal run, where stdout of
passing tests is captured.
"""

CRITERION_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERION_LINES:
            terminalreporter.write_line(line)
