import pytest

_ACCEPTANCE = []


@pytest.fixture
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for result in sorted(_ACCEPTANCE, key=lambda r: r.number):
        terminalreporter.write_line(result.line())
