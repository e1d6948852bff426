import pytest

CRITERIA: dict = {}


@pytest.fixture
def record_criterion():
    def record(key, passed, detail=""):
        CRITERIA[key] = (bool(passed), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA, key=lambda k: [int(p) if p.isdigit() else p for p in k.replace(".", " ").split()]):
        passed, detail = CRITERIA[key]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {key}: {detail}")
