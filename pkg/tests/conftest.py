import numpy as np
import pytest

from cellevo.data import Alphabet, encode_samples, synth_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def alphabet():
    return Alphabet()


@pytest.fixture(scope="session")
def synth_splits(alphabet):
    """Small planted-marker task: 500 train / 200 val / 200 test, length 48."""
    rng = np.random.default_rng(20240601)
    synth = synth_dataset(rng, 4, 900, 48)
    full = encode_samples(synth.samples, alphabet, 4, 48)
    train = full.subset(np.arange(0, 500))
    val = full.subset(np.arange(500, 700))
    test = full.subset(np.arange(700, 900))
    return train, val, test
