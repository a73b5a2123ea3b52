from __future__ import annotations

import sys

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "frba",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("frba")


@pytest.fixture(scope="session")
def small_log():
    from frba.data import generate_synthetic

    return generate_synthetic(n_users=3, days=60, anomaly_rate=0.0, seed=123)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: (int(k.split(".")[0]), k)):
        terminalreporter.write_line(results[key])
