"""Collects acceptance-criterion verdicts and echoes them after the run."""

import pytest

_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """Registry mapping criterion number to (passed, detail line)."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[num]
        terminalreporter.write_line(
            f"criterion {num}: {'PASS' if ok else 'FAIL'} - {detail}"
        )
