from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from shuttle_eta.synth import generate_site, preset, truth_stream

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_site():
    """Two service days of the seven-stop identical-fleet preset."""
    spec = preset("lesmureaux_like", seed=3, days=2)
    return generate_site(spec)


@pytest.fixture(scope="session")
def small_stream(small_site):
    return truth_stream(small_site)


@pytest.fixture(scope="session")
def linkoping_site():
    spec = preset("linkoping_like", seed=1, days=3)
    return generate_site(spec, with_traces=False)


@pytest.fixture(scope="session")
def linkoping_stream(linkoping_site):
    return truth_stream(linkoping_site)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
