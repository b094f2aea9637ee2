import pytest

# acceptance outcomes, filled by tests/test_acceptance.py and echoed at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def report_acceptance():
    def record(number, title, passed, detail):
        line = f"criterion {number} {'PASS' if passed else 'FAIL'} {title}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return record
