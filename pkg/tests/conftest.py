import pytest

# criterion id -> (status, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def record(criterion, status, detail=""):
    if isinstance(status, bool):
        status = "PASS" if status else "FAIL"
    ACCEPTANCE[criterion] = (status, detail)
    print(f"criterion {criterion}: {status}  {detail}")


@pytest.fixture
def acceptance_record():
    return record


def _order(key):
    key = str(key)
    return int(key.rstrip("abc")), key


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=_order):
        status, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {status}  {detail}")
