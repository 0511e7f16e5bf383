import pytest

_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line; call before asserting so failures are listed too."""

    def record(number, name, ok, detail=""):
        _LINES.append((number, f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {name}  [{detail}]"))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_LINES):
        terminalreporter.write_line(line)
