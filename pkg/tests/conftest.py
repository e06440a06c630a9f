import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mfldp.desk import desk

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def desk_case():
    return desk()


@pytest.fixture
def gen():
    return np.random.default_rng(12345)
