import numpy as np
import pytest

from cisir.data import DatasetDescriptor, DatasetTable


@pytest.fixture
def simple_table():
    rng = np.random.default_rng(7)
    features = rng.normal(size=(12, 3))
    targets = np.arange(1.0, 13.0)
    return DatasetTable(features=features, targets=targets, ids=np.arange(12))


@pytest.fixture
def two_sided_descriptor():
    return DatasetDescriptor(
        name="toy",
        lower_threshold=-0.5,
        upper_threshold=0.5,
        rare_bins=frozenset({1, 3}),
    )


def bimodal_targets(n=2000, rare_fraction=0.01, seed=0):
    """Dense cluster at 0 plus a small distant cluster at 5."""
    rng = np.random.default_rng(seed)
    n_rare = max(int(n * rare_fraction), 2)
    common = rng.normal(0.0, 0.25, n - n_rare)
    rare = rng.normal(5.0, 0.5, n_rare)
    return np.concatenate([common, rare])
