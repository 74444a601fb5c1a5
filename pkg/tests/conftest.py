import numpy as np
import pytest

from cspace_metrics import load_arm


@pytest.fixture(scope="session")
def planar_arm():
    return load_arm("planar3")


@pytest.fixture(scope="session")
def chain_arm():
    return load_arm("jaco7")


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
