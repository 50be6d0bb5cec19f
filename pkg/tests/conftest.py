import pytest

_ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance():
    """Record the outcome of an acceptance criterion for the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        _ACCEPTANCE[number] = (title, bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed, detail = _ACCEPTANCE[number]
        line = f"{'PASS' if passed else 'FAIL'}  [{number:2d}] {title}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
