import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from recloss import data  # noqa: E402
from recloss.kernels import available_backends  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(params=available_backends())
def backend(request):
    return request.param


@pytest.fixture(scope="session")
def small_ds():
    return data.synthetic(n_users=60, n_items=80, interactions_per_user=12, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
