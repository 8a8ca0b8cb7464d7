import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

CRITERIA = []


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(CRITERIA):
        terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion.

    Usage: ``criterion(number, ok, detail)``; the line is printed immediately
    and repeated in the terminal summary.
    """
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        CRITERIA.append(line)
        print(line)
        return ok
    return record
