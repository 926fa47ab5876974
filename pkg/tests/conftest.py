import warnings

import numpy as np
import pytest

warnings.filterwarnings("ignore", module="numba")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
