import pytest

_CRITERIA = {}


@pytest.fixture(scope="session")
def criteria_log():
    """Map of criterion number -> (passed, summary line), printed at the end of the run."""
    return _CRITERIA


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA):
        passed, line = _CRITERIA[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if passed else 'FAIL'}  {line}")
