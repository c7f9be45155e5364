import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from paneldpd.model import ModelParams, ObservationSchedule
from paneldpd.simulate import DEFAULT_SCHEDULE, DEFAULT_THETA

settings.register_profile(
    "default", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def theta() -> ModelParams:
    return DEFAULT_THETA


@pytest.fixture
def schedule() -> ObservationSchedule:
    return DEFAULT_SCHEDULE


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240601)
