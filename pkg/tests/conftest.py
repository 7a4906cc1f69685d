import pytest

# filled by tests/test_acceptance.py: (criterion number, title, passed, detail)
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num, title, passed, detail in sorted(ACCEPTANCE):
        tr.write_line(f"[{'PASS' if passed else 'FAIL'}] {num}. {title}: {detail}")


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict; call with (num, title, passed, detail)."""
    def record(num, title, passed, detail):
        ACCEPTANCE.append((num, title, bool(passed), detail))
        assert passed, f"criterion {num} ({title}) failed: {detail}"
    return record
