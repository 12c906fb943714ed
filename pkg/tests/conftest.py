import numpy as np
import pytest

from cdanneal.model import ParamBox, build_fvbm


@pytest.fixture(scope="session")
def fvbm2():
    return build_fvbm(2)


@pytest.fixture(scope="session")
def fvbm1():
    return build_fvbm(1)


@pytest.fixture(scope="session")
def box3():
    return ParamBox(3.0, 3)


@pytest.fixture(scope="session")
def theta_star():
    return np.array([0.5, 1.0, 0.5])
