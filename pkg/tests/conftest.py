import pytest

from scenarios import standard_environment

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def env():
    """Read-only shared environment; tests that publish or tamper build their own."""
    return standard_environment()


@pytest.fixture(scope="session")
def criterion():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(number: int, title: str, ok: bool, measured: str) -> None:
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} [{measured}]"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
