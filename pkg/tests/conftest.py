import numpy as np
import pytest
from hypothesis import settings

from w1a8 import fixtures

settings.register_profile("suite", deadline=None)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def tiny():
    """One seeded tiny pipeline shared by fast tests."""
    return fixtures.gen_tiny_manifest(11)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
