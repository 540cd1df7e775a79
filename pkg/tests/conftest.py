import pytest

_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance outcome; the summary prints every line at the end."""

    def report(number: int, ok: bool, detail: str) -> bool:
        _LINES.append((number, ok, detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(_LINES, key=lambda t: t[0]):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
