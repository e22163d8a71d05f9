import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("pkg", deadline=None, max_examples=60, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pkg")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        import suites
    except ImportError:
        return
    if not suites.RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(suites.RESULTS, key=str):
        ok, detail = suites.RESULTS[key]
        tr.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'} {detail}")
