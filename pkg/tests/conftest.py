import numpy as np
import pytest

from uavarray.config import default_config


@pytest.fixture
def small_config():
    """Four UAVs, two streams, four BS antennas; short sweeps."""
    return default_config(
        array={"N": 4, "K": 2},
        bs={"M": 4},
        sweeps={"gammas_db": [0.0, 10.0, 30.0], "N_values": [4], "K_values": [1, 2]},
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def random_channel(rng):
    def make(K, N):
        return rng.standard_normal((K, N)) + 1j * rng.standard_normal((K, N))

    return make
