import pytest

from empc_wds.model import LPS, richmond_pruned


@pytest.fixture
def model():
    """Reference network, constant-power optimizer mode, 5 L/s base demand."""
    return richmond_pruned()


@pytest.fixture
def table_model():
    return richmond_pruned(power_mode="table")


def lps(v):
    return v * LPS


# acceptance criteria register their verdicts here; printed at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
