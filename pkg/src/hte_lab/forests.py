"""Regression trees, regression/probability forests and pollination.

Trees are stored as flat node arrays in depth-first preorder (a parent always
has a smaller id than its children). A unit with ``x[feature] < threshold``
goes left, anything else goes right.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernels import best_regression_split, column_order
from .data import Dataset, as_matrix, as_rng
from .errors import InsufficientSamples, RootDegenerate, SingleClass, HTEError

DEFAULT_CLIP = 0.025


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 200
    max_depth: int = 4
    min_leaf: int = 5
    mtry: int | None = None  # None -> ceil(sqrt(p))
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise HTEError("n_trees must be >= 1", code="invalid-params")
        # max_depth 0 (a single leaf) is allowed so forests can degenerate to a mean
        if self.max_depth < 0:
            raise HTEError("max_depth must be >= 0", code="invalid-params")
        if self.min_leaf < 1:
            raise HTEError("min_leaf must be >= 1", code="invalid-params")
        if self.mtry is not None and self.mtry < 1:
            raise HTEError("mtry must be >= 1", code="invalid-params")

    def resolve_mtry(self, p: int) -> int:
        m = math.ceil(math.sqrt(p)) if self.mtry is None else self.mtry
        if m > p:
            raise HTEError(f"mtry={m} exceeds p={p}", code="invalid-params")
        return m


@dataclass(eq=False)
class Tree:
    """Binary tree topology with a per-node payload matrix ``value``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    parent: np.ndarray
    depth: np.ndarray
    value: np.ndarray  # (n_nodes, k)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def splits(self) -> list[tuple[int, float]]:
        return [(int(f), float(c)) for f, c in zip(self.feature, self.threshold) if f >= 0]

    def apply(self, X) -> np.ndarray:
        """Leaf id of every row of ``X``."""
        X = as_matrix(X)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.arange(X.shape[0])
        while active.size:
            nd = node[active]
            f = self.feature[nd]
            inner = f >= 0
            active, nd, f = active[inner], nd[inner], f[inner]
            if not active.size:
                break
            go_left = X[active, f] < self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
        return node

    def predict(self, X) -> np.ndarray:
        out = self.value[self.apply(X)]
        return out[:, 0] if out.shape[1] == 1 else out

    def with_value(self, value: np.ndarray) -> "Tree":
        return replace(self, value=np.asarray(value, dtype=float))


class _TreeBuilder:
    """Accumulates nodes in preorder."""

    def __init__(self):
        self.feature, self.threshold = [], []
        self.left, self.right, self.parent, self.depth = [], [], [], []
        self.value = []

    def add(self, parent: int, depth: int, value) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.parent.append(parent)
        self.depth.append(depth)
        self.value.append(np.atleast_1d(np.asarray(value, dtype=float)))
        return len(self.feature) - 1

    def build(self) -> Tree:
        return Tree(
            feature=np.array(self.feature, dtype=np.int64),
            threshold=np.array(self.threshold, dtype=float),
            left=np.array(self.left, dtype=np.int64),
            right=np.array(self.right, dtype=np.int64),
            parent=np.array(self.parent, dtype=np.int64),
            depth=np.array(self.depth, dtype=np.int64),
            value=np.vstack(self.value),
        )


def grow_tree(X, order, root_rows, find_split, payload, max_depth):
    """Generic greedy recursive partitioning.

    ``root_rows`` is a float weight (or 0/1 mask) per row; ``find_split(w)``
    returns ``(feature, threshold)`` with feature -1 for "no split", and
    ``payload(w)`` returns the node value.
    """
    b = _TreeBuilder()

    def rec(w, parent, depth):
        node = b.add(parent, depth, payload(w))
        if depth >= max_depth:
            return node
        f, thr = find_split(w)
        if f < 0:
            return node
        goes_left = X[:, f] < thr
        b.feature[node] = int(f)
        b.threshold[node] = float(thr)
        b.left[node] = rec(np.where(goes_left, w, 0), node, depth + 1)
        b.right[node] = rec(np.where(goes_left, 0, w), node, depth + 1)
        return node

    rec(np.asarray(root_rows), -1, 0)
    return b.build()


def _feature_sampler(p: int, mtry: int, rng: np.random.Generator):
    if mtry >= p:
        allf = np.arange(p, dtype=np.int64)
        return lambda: allf
    return lambda: np.sort(rng.choice(p, size=mtry, replace=False)).astype(np.int64)


def _fit_weighted_tree(X, order, y, w, max_depth, min_leaf, sample_feats):
    y = np.ascontiguousarray(y, dtype=float)

    def payload(wn):
        return np.dot(wn, y) / wn.sum()

    def find_split(wn):
        if wn.sum() < 2 * min_leaf:
            return -1, 0.0
        m = wn > 0
        yy = y[m]
        ww = wn[m]
        mean = np.dot(ww, yy) / ww.sum()
        sse = np.dot(ww, (yy - mean) ** 2)
        if sse <= 1e-12 * np.dot(ww, yy * yy) + 1e-300:
            return -1, 0.0
        f, thr, _ = best_regression_split(X, order, wn, y, sample_feats(), float(min_leaf))
        return f, thr

    return grow_tree(X, order, w.astype(float), find_split, payload, max_depth)


def fit_regression_tree(X, y, params: ForestParams = ForestParams(), rng=None,
                        order: np.ndarray | None = None) -> Tree:
    """Greedy CART on all rows of ``X`` (no resampling)."""
    X = np.ascontiguousarray(as_matrix(X))
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if len(y) != n:
        raise HTEError("X and y disagree on n", code="dimension-mismatch")
    if n < max(2, 2 * params.min_leaf) and params.max_depth > 0:
        raise InsufficientSamples(f"need at least {2 * params.min_leaf} rows, got {n}")
    rng = as_rng(params.seed if rng is None else rng)
    order = column_order(X) if order is None else order
    sampler = _feature_sampler(p, params.resolve_mtry(p), rng)
    return _fit_weighted_tree(X, order, y, np.ones(n), params.max_depth, params.min_leaf, sampler)


@dataclass(eq=False)
class RegressionForest:
    trees: list[Tree]
    params: ForestParams
    inbag: np.ndarray | None = None  # (n_trees, n_train) resample counts
    clip: float | None = None

    def _finish(self, pred):
        if self.clip is not None:
            pred = np.clip(pred, self.clip, 1.0 - self.clip)
        return pred

    def predict_trees(self, X) -> np.ndarray:
        """(n_trees, m) matrix of per-tree predictions."""
        X = as_matrix(X)
        return np.vstack([t.predict(X) for t in self.trees])

    def predict(self, X) -> np.ndarray:
        return self._finish(self.predict_trees(X).mean(axis=0))

    def oob_predict(self, X_train) -> np.ndarray:
        """Out-of-bag prediction for the training rows.

        Rows that were in-bag for every tree fall back to the full average.
        """
        per_tree = self.predict_trees(X_train)
        if self.inbag is None:
            return self._finish(per_tree.mean(axis=0))
        oob = self.inbag == 0
        cnt = oob.sum(axis=0)
        tot = np.where(oob, per_tree, 0.0).sum(axis=0)
        pred = np.where(cnt > 0, tot / np.maximum(cnt, 1), per_tree.mean(axis=0))
        return self._finish(pred)


def fit_regression_forest(X, y, params: ForestParams = ForestParams(), rng=None,
                          clip: float | None = None) -> RegressionForest:
    X = np.ascontiguousarray(as_matrix(X))
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if len(y) != n:
        raise HTEError("X and y disagree on n", code="dimension-mismatch")
    if n < max(2, 2 * params.min_leaf) and params.max_depth > 0:
        raise InsufficientSamples(f"need at least {2 * params.min_leaf} rows, got {n}")
    rng = as_rng(params.seed if rng is None else rng)
    mtry = params.resolve_mtry(p)
    order = column_order(X)
    trees = []
    inbag = np.zeros((params.n_trees, n), dtype=np.int32)
    # one child stream per tree: the result does not depend on fitting order
    for k, tree_rng in enumerate(rng.spawn(params.n_trees)):
        if params.bootstrap:
            w = np.bincount(tree_rng.integers(0, n, size=n), minlength=n)
        else:
            w = np.ones(n, dtype=np.int64)
        inbag[k] = w
        sampler = _feature_sampler(p, mtry, tree_rng)
        trees.append(_fit_weighted_tree(X, order, y, w, params.max_depth, params.min_leaf, sampler))
    return RegressionForest(trees, params, inbag if params.bootstrap else None, clip)


def fit_probability_forest(X, labels, params: ForestParams = ForestParams(), rng=None,
                           clip: float = DEFAULT_CLIP) -> RegressionForest:
    """Forest of regression trees on 0/1 labels; leaves hold class-1 shares.

    Trees are averaged (not voted) and predictions clipped to
    ``[clip, 1 - clip]``.
    """
    labels = np.asarray(labels).ravel()
    if not np.all(np.isin(labels, (0, 1))):
        raise HTEError("labels must be 0/1", code="invalid-labels")
    if labels.min() == labels.max():
        raise SingleClass("labels contain a single class")
    return fit_regression_forest(X, labels.astype(float), params, rng, clip=clip)


# --------------------------------------------------------------------------
# pollination


def node_cell_stats(tree: Tree, X, t, y, strata=None, n_strata: int = 1):
    """Per-node (count, sum, sum of squares) arrays of shape (n_nodes, S, 2).

    Internal nodes aggregate their descendants.
    """
    leaf = tree.apply(X)
    t = np.asarray(t).astype(np.int64)
    y = np.asarray(y, dtype=float)
    s = np.zeros(len(y), dtype=np.int64) if strata is None else np.asarray(strata, dtype=np.int64)
    K = tree.n_nodes
    key = (leaf * n_strata + s) * 2 + t
    size = K * n_strata * 2
    cnt = np.bincount(key, minlength=size).astype(float).reshape(K, n_strata, 2)
    sm = np.bincount(key, weights=y, minlength=size).reshape(K, n_strata, 2)
    sq = np.bincount(key, weights=y * y, minlength=size).reshape(K, n_strata, 2)
    for node in range(K - 1, 0, -1):
        par = tree.parent[node]
        cnt[par] += cnt[node]
        sm[par] += sm[node]
        sq[par] += sq[node]
    return cnt, sm, sq


def stratified_node_means(cnt, sm, min_arm: int = 1):
    """Adjusted arm means per node; strata count iff both arms have ``min_arm``.

    Returns ``(mu1, mu0, ok)`` arrays over nodes.
    """
    use = (cnt[..., 0] >= min_arm) & (cnt[..., 1] >= min_arm)
    with np.errstate(invalid="ignore", divide="ignore"):
        arm_mean = np.where(cnt > 0, sm / np.where(cnt > 0, cnt, 1.0), 0.0)
    ns = np.where(use, cnt.sum(axis=-1), 0.0)
    den = ns.sum(axis=1)
    ok = den > 0
    safe = np.where(ok, den, 1.0)
    mu1 = (ns * arm_mean[..., 1]).sum(axis=1) / safe
    mu0 = (ns * arm_mean[..., 0]).sum(axis=1) / safe
    return mu1, mu0, ok


def nearest_viable_ancestor(tree: Tree, ok: np.ndarray) -> np.ndarray:
    """For every node, itself if ``ok`` else its closest ``ok`` ancestor."""
    if not ok[0]:
        raise RootDegenerate("the data routed to the root lack one arm")
    src = np.arange(tree.n_nodes)
    for node in range(1, tree.n_nodes):  # preorder: parents resolved first
        if not ok[node]:
            src[node] = src[tree.parent[node]]
    return src


@dataclass(eq=False)
class PairTree:
    """A tree whose leaves hold the treated and control means."""

    tree: Tree
    mu1: np.ndarray
    mu0: np.ndarray
    n1: np.ndarray
    n0: np.ndarray
    source: np.ndarray = field(default=None)  # node whose pair each node carries

    def predict_means(self, X) -> tuple[np.ndarray, np.ndarray]:
        leaf = self.tree.apply(X)
        return self.mu1[leaf], self.mu0[leaf]

    def predict_effect(self, X) -> np.ndarray:
        mu1, mu0 = self.predict_means(X)
        return mu1 - mu0


def pollinate(tree: Tree, X, t, y, strata=None, n_strata: int = 1, min_arm: int = 1) -> PairTree:
    """Replace ``tree``'s payloads with (stratum-adjusted) arm means of new data.

    Leaves lacking an arm inherit the pair of their nearest viable ancestor.
    """
    cnt, sm, _ = node_cell_stats(tree, X, t, y, strata, n_strata)
    mu1, mu0, ok = stratified_node_means(cnt, sm, min_arm)
    src = nearest_viable_ancestor(tree, ok)
    n1 = cnt[..., 1].sum(axis=1)
    n0 = cnt[..., 0].sum(axis=1)
    return PairTree(tree, mu1[src], mu0[src], n1, n0, src)


def pollinate_tree(tree: Tree, d: Dataset) -> PairTree:
    return pollinate(tree, d.X, d.t, d.y)
