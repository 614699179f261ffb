"""Echo the acceptance battery's verdict lines after the run.

The acceptance tests record one "[acceptance] <label>: PASS/FAIL" line each
(failures included, via try/finally); printing them from inside a test would
be swallowed by capture, so they are replayed in the terminal summary.
"""
import sys


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get(
        "tests.test_acceptance")
    for line in getattr(mod, "VERDICT_LINES", []):
        terminalreporter.write_line(line)
