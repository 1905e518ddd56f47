import math
import os

import numpy as np
import pytest
from hypothesis import settings

from zonetrap.io import load_config

settings.register_profile("default", max_examples=40, deadline=None)
settings.register_profile("stress", max_examples=400, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

OMEGA0 = 2 * math.pi * 1.9e6


@pytest.fixture(scope="session")
def config():
    return load_config()


@pytest.fixture(scope="session")
def layout(config):
    return config.layout


@pytest.fixture(scope="session")
def limits(config):
    return config.hardware


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
