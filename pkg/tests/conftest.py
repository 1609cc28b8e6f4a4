import pytest

_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for the acceptance summary."""

    def emit(label: str, passed: bool, detail: str = "") -> bool:
        line = f"{'PASS' if passed else 'FAIL'}  {label}" + (f"  ({detail})" if detail else "")
        _LINES.append(line)
        print(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
