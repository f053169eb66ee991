import numpy as np
import pytest

from lvcoverage import network as nw
from lvcoverage import phantom as ph


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def quiet_spec():
    """Noise-free, texture-free phantom spec for geometry-sensitive tests."""
    return ph.PhantomSpec(noise_sd=0.0, texture_amp=0.0)


@pytest.fixture(scope="session")
def default_volume():
    return ph.gen_volume(ph.PhantomSpec(), np.random.default_rng([5, 0]))


@pytest.fixture(scope="session")
def quiet_volume(quiet_spec):
    return ph.gen_volume(quiet_spec, np.random.default_rng([5, 1]))


@pytest.fixture(scope="session")
def tiny_params():
    return nw.init_params(nw.tiny_arch(), seed=7, dtype=np.float64, scheme="fanin")


def tiny_blob_dataset(n, seed, size=(8, 8, 3)):
    """Trivially separable blocks for tiny-arch tests: class 1 has a bright
    top-left patch, class 0 a bright bottom-right patch, plus noise."""
    rng = np.random.default_rng(seed)
    h, w, d = size
    x = rng.normal(0.2, 0.05, size=(n, h, w, d)).astype(np.float64)
    y = (np.arange(n) % 2).astype(np.int64)
    for i in range(n):
        if y[i] == 1:
            x[i, : h // 2, : w // 2, :] += 0.8
        else:
            x[i, h // 2 :, w // 2 :, :] += 0.8
    return x, y
