import numpy as np
import pytest

from robust_gxe.data_model import GxEDataset, standardize
from robust_gxe.distributions import RngStream
from robust_gxe.simgen import SimulationConfig, gen_dataset


def make_tiny_dataset(n=40, p=4, k=2, q=1, seed=0, standardized=True):
    """Small simulated dataset for fast sampler tests."""
    sim = SimulationConfig(n=n, p=p, k=k, q=q, seed=seed,
                           n_active_groups=min(2, p),
                           n_active_effects=min(3, p * (k + 1)))
    train, _, truth = gen_dataset(sim, RngStream(seed, 77))
    if standardized:
        train, _ = standardize(train)
    return train, truth


@pytest.fixture
def tiny_dataset():
    train, _ = make_tiny_dataset()
    return train


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
