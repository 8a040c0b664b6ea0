import pytest

_RESULTS = []


@pytest.fixture
def criterion():
    """Record one acceptance line; returns ``ok`` so callers can assert on it."""

    def record(label, ok, detail=""):
        _RESULTS.append(f"{'PASS' if ok else 'FAIL'}  criterion {label}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in _RESULTS:
            terminalreporter.write_line(line)
