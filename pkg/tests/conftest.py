import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from simulstream import desk_config, init_random

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def desk_weights():
    """2 encoder layers, 256x4 decoder, k=6."""
    return init_random(desk_config(k=6), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def noise(rng, n_samples, scale=4000.0):
    return (rng.standard_normal(n_samples) * scale).clip(-32768, 32767).astype(np.int16)


def pytest_terminal_summary(terminalreporter):
    try:
        from tests import test_acceptance
    except ImportError:
        return
    lines = getattr(test_acceptance, "RESULTS", [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
