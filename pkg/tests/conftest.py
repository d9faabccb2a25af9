import pytest

# criterion number -> (status, detail); filled in by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.fixture
def verdict():
    def record(criterion: int, status: str, detail: str) -> None:
        ACCEPTANCE[criterion] = (status, detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{status}] criterion {key}: {detail}")
