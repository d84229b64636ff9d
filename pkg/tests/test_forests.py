from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hte_lab.errors import InsufficientSamples, RootDegenerate, SingleClass
from hte_lab.forests import (
    ForestParams, fit_probability_forest, fit_regression_forest, fit_regression_tree,
    pollinate, pollinate_tree,
)
from hte_lab.data import Dataset

from oracles import greedy_cart_sse

FULL = dict(n_trees=1, bootstrap=False)


def tree_sse(tree, X, y):
    return float(((y - tree.predict(X)) ** 2).sum())


def test_separable_single_split():
    X = np.array([[0.0], [0.0], [1.0], [1.0]])
    tree = fit_regression_tree(X, [0.0, 0.0, 10.0, 10.0], ForestParams(max_depth=4, min_leaf=1, mtry=1))
    assert tree.splits() == [(0, 0.5)]
    assert sorted(tree.value[tree.is_leaf, 0]) == [0.0, 10.0]


def test_constant_response_is_one_leaf():
    X = np.random.default_rng(0).normal(size=(30, 3))
    tree = fit_regression_tree(X, np.full(30, 2.5), ForestParams(min_leaf=1))
    assert tree.n_nodes == 1 and tree.value[0, 0] == 2.5


def test_insufficient_samples():
    with pytest.raises(InsufficientSamples) as e:
        fit_regression_tree(np.zeros((3, 1)), [1.0, 2.0, 3.0], ForestParams(min_leaf=2))
    assert e.value.code == "insufficient-samples"


def test_ties_route_right():
    X = np.array([[0.0], [1.0], [1.0], [2.0]])
    tree = fit_regression_tree(X, [0.0, 5.0, 5.0, 5.0], ForestParams(max_depth=1, min_leaf=1, mtry=1))
    (f, c), = tree.splits()
    assert tree.apply(np.array([[c]]))[0] == tree.right[0]


def test_twenty_point_depth_two_matches_exhaustive_cart():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(20, 2))
    y = np.where(X[:, 0] > 0, 2.0, -1.0) + X[:, 1] + 0.3 * rng.normal(size=20)
    tree = fit_regression_tree(X, y, ForestParams(max_depth=2, min_leaf=1, mtry=2))
    assert tree_sse(tree, X, y) == pytest.approx(greedy_cart_sse(X, y, 2), rel=1e-10)


@given(st.integers(4, 25), st.integers(1, 3), st.integers(1, 2), st.integers(0, 10_000))
def test_small_instance_cart_oracle(n, p, depth, seed):
    rng = np.random.default_rng(seed)
    X = np.round(rng.normal(size=(n, p)), 1)
    y = rng.normal(size=n) + 2 * (X[:, 0] > 0)
    tree = fit_regression_tree(X, y, ForestParams(max_depth=depth, min_leaf=1, mtry=p))
    assert tree.max_depth <= depth
    assert tree_sse(tree, X, y) == pytest.approx(greedy_cart_sse(X, y, depth), rel=1e-9, abs=1e-9)


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_min_leaf_and_partition(seed, min_leaf):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 2))
    y = rng.normal(size=40)
    tree = fit_regression_tree(X, y, ForestParams(max_depth=4, min_leaf=min_leaf, mtry=2))
    counts = np.bincount(tree.apply(X), minlength=tree.n_nodes)[tree.is_leaf]
    assert counts.sum() == 40
    assert counts.min() >= min_leaf


def test_degenerate_forest_equals_tree():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(50, 4))
    y = X[:, 0] ** 2 + rng.normal(size=50)
    params = ForestParams(mtry=4, **FULL)
    tree = fit_regression_tree(X, y, params)
    forest = fit_regression_forest(X, y, params)
    np.testing.assert_array_equal(forest.predict(X), tree.predict(X))


def test_constant_target_forest():
    X = np.random.default_rng(0).normal(size=(40, 3))
    f = fit_regression_forest(X, np.full(40, -1.5), ForestParams(n_trees=10))
    np.testing.assert_array_equal(f.predict(X), -1.5)


def test_forest_beats_tree_on_smooth_target():
    rng = np.random.default_rng(5)
    def friedman(X):
        return 10 * np.sin(np.pi * X[:, 0] * X[:, 1]) + 20 * (X[:, 2] - 0.5) ** 2 + 10 * X[:, 3] + 5 * X[:, 4]
    X, Xt = rng.random((200, 5)), rng.random((500, 5))
    y = friedman(X) + rng.normal(size=200)
    tree = fit_regression_tree(X, y, ForestParams(max_depth=4))
    forest = fit_regression_forest(X, y, ForestParams(n_trees=100, max_depth=4), rng=1)
    mse_tree = np.mean((tree.predict(Xt) - friedman(Xt)) ** 2)
    mse_forest = np.mean((forest.predict(Xt) - friedman(Xt)) ** 2)
    assert mse_forest < mse_tree


def test_forest_is_deterministic():
    rng = np.random.default_rng(1)
    X, y = rng.normal(size=(60, 5)), rng.normal(size=60)
    a = fit_regression_forest(X, y, ForestParams(n_trees=15), rng=9)
    b = fit_regression_forest(X, y, ForestParams(n_trees=15), rng=9)
    for s, t in zip(a.trees, b.trees):
        np.testing.assert_array_equal(s.threshold, t.threshold)
        np.testing.assert_array_equal(s.value, t.value)


def test_pure_leaves_clip():
    X = np.array([[-1.0], [-0.5], [0.5], [1.0]] * 5)
    lab = (X[:, 0] > 0).astype(int)
    f = fit_probability_forest(X, lab, ForestParams(min_leaf=1, **FULL), clip=0.025)
    assert set(np.round(f.predict(X), 12)) == {0.025, 0.975}


def test_probability_forest_marginal_rate():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(500, 4))
    lab = (rng.random(500) < 0.3).astype(int)
    f = fit_probability_forest(X, lab, ForestParams(n_trees=100), rng=0)
    assert abs(f.predict(X).mean() - lab.mean()) < 0.05


def test_probability_forest_separable_accuracy():
    rng = np.random.default_rng(4)
    X, Xt = rng.normal(size=(300, 3)), rng.normal(size=(300, 3))
    f = fit_probability_forest(X, (X[:, 0] >= 0).astype(int), ForestParams(n_trees=50), rng=0)
    assert np.mean((f.predict(Xt) > 0.5) == (Xt[:, 0] >= 0)) == 1.0


def test_single_class_rejected():
    with pytest.raises(SingleClass) as e:
        fit_probability_forest(np.zeros((10, 1)), np.ones(10, dtype=int))
    assert e.value.code == "single-class"


def test_pollinate_single_leaf():
    X = np.zeros((4, 1))
    tree = fit_regression_tree(X, np.zeros(4), ForestParams(min_leaf=1))
    pt = pollinate_tree(tree, Dataset(X, [1, 1, 0, 0], [3.0, 5.0, 1.0, 1.0]))
    assert (pt.mu1[0], pt.mu0[0], pt.n1[0], pt.n0[0]) == (4.0, 1.0, 2, 2)
    assert pt.predict_effect(X).tolist() == [3.0] * 4


def test_pollinate_fallback_to_parent():
    X = np.array([[0.0], [0.0], [1.0], [1.0], [1.0]])
    tree = fit_regression_tree(X, [0.0, 0.0, 1.0, 1.0, 1.0], ForestParams(max_depth=1, min_leaf=1, mtry=1))
    # left leaf holds only treated units
    pt = pollinate(tree, X, np.array([1, 1, 1, 0, 0]), np.array([2.0, 4.0, 6.0, 1.0, 3.0]))
    left = tree.left[0]
    assert pt.source[left] == 0
    assert (pt.mu1[left], pt.mu0[left]) == (pt.mu1[0], pt.mu0[0]) == (4.0, 2.0)


def test_pollinate_root_degenerate():
    tree = fit_regression_tree(np.zeros((4, 1)), np.zeros(4), ForestParams(min_leaf=1))
    with pytest.raises(RootDegenerate):
        pollinate(tree, np.zeros((4, 1)), np.ones(4, dtype=int), np.arange(4.0))


@given(st.integers(0, 10_000))
def test_pollination_keeps_topology_and_is_idempotent(seed):
    rng = np.random.default_rng(seed)
    X, y = rng.normal(size=(50, 3)), rng.normal(size=50)
    t = rng.integers(0, 2, 50)
    t[:2] = [0, 1]
    tree = fit_regression_tree(X, y, ForestParams(max_depth=3, min_leaf=2))
    a = pollinate(tree, X, t, y)
    b = pollinate(a.tree, X, t, y)
    assert a.tree.splits() == tree.splits()
    np.testing.assert_array_equal(a.mu1, b.mu1)
    np.testing.assert_array_equal(a.mu0, b.mu0)
