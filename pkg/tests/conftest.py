import numpy as np
import pytest

from gramlink import kernels
from gramlink.dataset import synth_fixture


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def fixture_split():
    return synth_fixture(0)


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    with kernels.use_backend(request.param):
        yield request.param
