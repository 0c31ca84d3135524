"""Repo-wide pytest wiring.

The acceptance tests record one pass/fail line per numbered check; fd
capture would swallow direct prints, so they are replayed after the run
through the terminal reporter.
"""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "CHECK_LINES", None) if mod else None
    if lines:
        terminalreporter.section("acceptance checks")
        for line in lines:
            terminalreporter.write_line(line)
