import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from terraseg.tensor import SeededRng, Tensor

settings.register_profile(
    "suite",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


def rand_tensor(seed, shape, low=-1.0, high=1.0):
    """Deterministic random tensor helper shared across test modules."""
    return Tensor(SeededRng(seed).uniform(low, high, tuple(shape)))


@pytest.fixture
def rng():
    return np.random.default_rng(20260818)
