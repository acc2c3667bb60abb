import pytest

CRITERIA_LINES = []


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(number, ok, detail, seconds=None):
        timing = "" if seconds is None else f" [{seconds:.1f}s]"
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}{timing}"
        CRITERIA_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
