import numpy as np
import pytest

from clrnet import kernels
from clrnet.arch import preset
from clrnet.backbone import build_network, freeze
from clrnet.data import Dataset


@pytest.fixture(params=["python", "cython"])
def backend(request):
    if request.param == "cython" and not kernels.compiled_available():
        pytest.skip("compiled kernels not built")
    prev = kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(prev)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


def make_dataset(n, n_classes=10, shape=(1, 28, 28), seed=0, name="rand"):
    r = np.random.Generator(np.random.PCG64(seed))
    labels = np.arange(n) % n_classes
    images = r.standard_normal((n,) + tuple(shape)).astype(np.float32)
    return Dataset(images, labels, [str(i) for i in range(n_classes)], name=name)


@pytest.fixture(scope="session")
def frozen_tinynet():
    return freeze(build_network(preset("tinynet"), seed=0))


@pytest.fixture(scope="session")
def frozen_resnet18():
    return freeze(build_network(preset("resnet18-lite", (3, 16, 16), 10), seed=0))
