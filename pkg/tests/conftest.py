import pytest

_LINES = []


class AcceptanceLog:
    def record(self, label: str, passed: bool, detail: str = ""):
        _LINES.append((label, bool(passed), detail))
        return passed


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in _LINES:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {label}: {detail}")
