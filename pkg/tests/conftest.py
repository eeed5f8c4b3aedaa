import numpy as np
import pytest

from rulefuse import Dataset, train_bagged_ensemble
from rulefuse.ensemble import DecisionTree, LeafNode, SplitNode


def make_dataset(seed, n=120, p=5, noise=0.3):
    """Synthetic regression data with threshold structure trees can pick up."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, (n, p))
    y = (
        3.0 * (X[:, 0] > 0.5)
        + 2.0 * X[:, 1]
        - 1.5 * (X[:, 2] > 0.3) * (X[:, 3] < 0.7)
        + rng.normal(0.0, noise, n)
    )
    return Dataset(X, y, [f"f{i}" for i in range(p)])


def small_problem(seed, n=120, n_trees=12, max_depth=3):
    """Dataset + ensemble pair used across solver-level tests."""
    data = make_dataset(seed, n=n)
    ensemble = train_bagged_ensemble(data, n_trees=n_trees, max_depth=max_depth, rng_seed=seed)
    return data, ensemble


def depth1_tree(feature=0, threshold=1.5, left_value=0.0, right_value=10.0):
    return DecisionTree(
        SplitNode(feature, threshold, LeafNode(left_value, 2), LeafNode(right_value, 2))
    )


def complete_tree(depth, values=None, feature_of_level=None):
    """Complete binary tree; leaf j gets values[j] (default: j as float)."""
    n_leaves = 2**depth
    if values is None:
        values = [float(j) for j in range(n_leaves)]
    counter = [0]

    def build(level, lo, hi):
        if level == depth:
            leaf = LeafNode(values[counter[0]], 1)
            counter[0] += 1
            return leaf
        feature = feature_of_level[level] if feature_of_level else level % 3
        mid = (lo + hi) / 2.0
        return SplitNode(feature, mid, build(level + 1, lo, mid), build(level + 1, mid, hi))

    return DecisionTree(build(0, 0.0, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
