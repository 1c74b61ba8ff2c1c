import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("pssf", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pssf")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
