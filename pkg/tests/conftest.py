import numpy as np
import pytest

from safemanip.robots import load_robot, planar_2r, planar_3r


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def planar2r():
    return planar_2r()


@pytest.fixture(scope="session")
def planar2r_gravity():
    return planar_2r(gravity=(0.0, -9.81, 0.0))


@pytest.fixture(scope="session")
def planar3r():
    return planar_3r()


@pytest.fixture(scope="session")
def panda7():
    return load_robot("panda7")
