import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "gibbskit", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("gibbskit")

_CRITERIA = {}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def criterion():
    """Record the outcome line of an acceptance criterion: ``criterion(k, ok, detail)``."""
    def record(k, ok, detail=""):
        _CRITERIA[k] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        ok, detail = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:>4}: {'PASS' if ok else 'FAIL'}  {detail}")
