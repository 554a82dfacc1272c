import sys

import pytest

_LINES = []


@pytest.fixture
def report():
    """Record one ``criterion N: PASS|FAIL`` line; all lines are repeated in the terminal summary."""
    def emit(number, ok, detail=""):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}" + (f"  {detail}" if detail else "")
        _LINES.append(line)
        print(line, file=sys.stderr)
    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: (int(s.split()[1].rstrip(":").rstrip("ab")), s)):
            terminalreporter.write_line(line)
