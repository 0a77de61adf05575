import numpy as np
import pytest

from scampsim.geometry import PlaneGeometry


@pytest.fixture
def geometry():
    return PlaneGeometry()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_binary(rng, side=64):
    return rng.integers(0, 2, size=(side, side)).astype(np.uint8)
