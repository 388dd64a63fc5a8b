import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from oblivbench.trace import set_recording

# first calls compile kernels, so wall-clock deadlines are meaningless
settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

BOUNDARY_WORDS = [0, 1, (1 << 63) - 1, 1 << 63, (1 << 64) - 1]


@pytest.fixture(autouse=True)
def _recording_on():
    set_recording(True)
    yield
    set_recording(True)


@pytest.fixture
def rs():
    return np.random.default_rng(12345)
