import pytest

from sstr.model import SystemConfig


@pytest.fixture
def base_config():
    """N=2000, M=128, T=200, p_a=0.1 at 10 dB with QPSK."""
    return SystemConfig.from_snr_db(10.0, N=2000, M=128, T=200, p_a=0.1, W=4)


@pytest.fixture
def small_config():
    return SystemConfig.from_snr_db(20.0, N=20, M=8, T=40, p_a=0.1, W=4)


_ACCEPTANCE = {}


@pytest.fixture
def record():
    """Store one acceptance verdict: ``record(n, passed, detail)``."""

    def _record(number, passed, detail):
        _ACCEPTANCE[number] = (bool(passed), detail)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
