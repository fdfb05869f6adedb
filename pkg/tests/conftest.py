import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("noarb", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "noarb"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def within_se(estimate, target, se, k=4.0):
    return abs(estimate - target) <= k * se
