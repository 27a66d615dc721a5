import pytest

_criterion_lines: list[str] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion, then assert."""

    def check(cid: str, name: str, ok: bool, details: str = "") -> None:
        _criterion_lines.append(f"{cid} {name}: {'PASS' if ok else 'FAIL'}")
        assert ok, f"{cid} {name} failed: {details}"

    return check


def pytest_terminal_summary(terminalreporter, exitstatus):
    if _criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in _criterion_lines:
            terminalreporter.write_line(line)
