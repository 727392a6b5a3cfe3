import os
import sys

sys.path.insert(0, os.path.dirname(__file__))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    from helpers import ACCEPTANCE_RESULTS

    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        description, status, details = ACCEPTANCE_RESULTS[number]
        line = f"criterion {number:2d}: {status} - {description}"
        if details:
            line += " [" + "; ".join(details) + "]"
        terminalreporter.write_line(line)
