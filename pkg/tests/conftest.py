import pytest

_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_line():
    """Record one PASS/FAIL line; the lines are repeated in the terminal summary."""

    def record(number, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number}: {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
