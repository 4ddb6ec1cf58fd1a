import pytest

from geobft.core import SystemConfig
from helpers import make_keyring


@pytest.fixture
def config4():
    return SystemConfig(z=2, n=4, f=1, batch_size=10, base_timeout=100.0, seed=7)


@pytest.fixture
def keyring4(config4):
    return make_keyring(config4)
