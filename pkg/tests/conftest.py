import numpy as np
import pytest

from nctlab.nctorus import AlgebraParams


GOLDEN = (5.0 ** 0.5 - 1.0) / 2.0


@pytest.fixture
def params():
    return AlgebraParams(theta=GOLDEN, tau=complex(0.3, 1.1))


@pytest.fixture
def params_square():
    return AlgebraParams(theta=1.0 / 2.0 ** 0.5, tau=1j)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
