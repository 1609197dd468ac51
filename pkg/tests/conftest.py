import os
from pathlib import Path

import numpy as np
import pytest

from bsodh._kernels import available_backends

MNIST_DIR = Path(os.environ.get("BSODH_MNIST_DIR", "/root/data/mnist"))


def random_codes(rng, k, n):
    return np.where(rng.random((k, n)) < 0.5, -1, 1).astype(np.int8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=available_backends())
def backend(request):
    return request.param
