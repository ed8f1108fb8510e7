import numpy as np
import pytest

from swarmsig import ibs
from swarmsig.gf import PrimeField
from swarmsig.ibs import DESK


@pytest.fixture(scope="session")
def f31():
    return PrimeField(31)


@pytest.fixture(scope="session")
def desk_keys():
    """One desk-profile master key pair shared across the suite."""
    rng = np.random.default_rng(1234)
    return ibs.setup(DESK, rng)


@pytest.fixture()
def rng():
    return np.random.default_rng(99)
