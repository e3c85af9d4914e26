import math

import numpy as np
import pytest

from nullctl import (DualParameters, build_heat1d, from_matrices, gaussian_profile,
                     make_propagator, sample_initial)


@pytest.fixture
def scalar():
    """y' = -y + u on [0, 1]; every quantity has a closed form."""
    system = from_matrices([[-1.0]], [[1.0]], 1.0)
    return system, make_propagator(system)


@pytest.fixture
def no_penalty():
    return lambda p: DualParameters(p=p, beta=math.inf)


@pytest.fixture(scope="session")
def heat20():
    system = build_heat1d(20)
    return system, make_propagator(system), sample_initial(system, gaussian_profile)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
