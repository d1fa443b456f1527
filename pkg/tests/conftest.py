import pytest

_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance line; returns ``ok`` so tests can assert on it."""

    def _report(label: str, ok: bool, detail: str) -> bool:
        _LINES.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
        print(_LINES[-1])
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
