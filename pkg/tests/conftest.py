import numpy as np
import pytest

from blade_rec.data import SyntheticConfig, generate_synthetic, leave_one_out_split
from blade_rec.stats import compute_behavior_stats


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate_synthetic(
        SyntheticConfig(n_users=24, n_items=40, min_len=4, max_len=10, n_clusters=4),
        seed=11,
    )


@pytest.fixture(scope="session")
def tiny_splits(tiny_dataset):
    return leave_one_out_split(tiny_dataset)


@pytest.fixture(scope="session")
def tiny_stats(tiny_splits):
    return compute_behavior_stats(tiny_splits.train)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
