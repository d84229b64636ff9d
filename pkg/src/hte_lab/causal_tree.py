"""Causal trees split on the T-statistic of the child effect difference.

Effects inside a node are stratum-weighted contrasts of arm means; with a
single stratum this is the plain difference of arm means and the usual
two-sample variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import _viable, best_causal_split, column_order
from .data import Dataset, EffectModel, as_matrix, as_rng
from .errors import HTEError, RootNotViable
from .forests import Tree, _feature_sampler, grow_tree
from .propensity import StrataAssignment, stratified_effect, uniform_strata

# an arm needs two units in a stratum before its sample variance exists
MIN_ARM_FOR_VARIANCE = 2


@dataclass(frozen=True)
class CausalTreeParams:
    max_depth: int = 3
    min_leaf_per_arm: int = 2
    mtry: int | None = None  # None -> all features
    min_split_gain: float = 0.0

    def __post_init__(self):
        if self.min_leaf_per_arm < MIN_ARM_FOR_VARIANCE:
            raise HTEError("min_leaf_per_arm must be >= 2", code="invalid-params")
        if self.max_depth < 0 or self.min_split_gain < 0:
            raise HTEError("max_depth and min_split_gain must be >= 0", code="invalid-params")


@dataclass(frozen=True)
class LeafEstimate:
    mu1: float
    mu0: float
    tau: float
    var_tau: float
    n_leaf: int


def leaf_estimate(d: Dataset, sa: StrataAssignment | None = None) -> LeafEstimate:
    """Propensity-stratified effect of the rows in ``d`` and its variance."""
    sa = uniform_strata(d.n) if sa is None else sa
    tau, var, mu1, mu0, _ = stratified_effect(d.y, d.t, sa.index, sa.S, MIN_ARM_FOR_VARIANCE)
    return LeafEstimate(mu1, mu0, mu1 - mu0, var, d.n)


# node payload columns
MU1, MU0, TAU, VAR, NLEAF = range(5)


@dataclass(eq=False)
class CausalTree(EffectModel):
    tree: Tree
    params: CausalTreeParams
    n_strata: int = 1

    def predict_means(self, X) -> tuple[np.ndarray, np.ndarray]:
        v = self.tree.value[self.tree.apply(X)]
        return v[:, MU1], v[:, MU0]

    def leaf(self, node: int) -> LeafEstimate:
        v = self.tree.value[node]
        return LeafEstimate(v[MU1], v[MU0], v[TAU], v[VAR], int(v[NLEAF]))

    def leaves(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.tree.is_leaf)]


def predict_pair(tree: CausalTree, x) -> tuple[float, float]:
    mu1, mu0 = tree.predict_means(as_matrix(x))
    return float(mu1[0]), float(mu0[0])


def fit_causal_tree(d: Dataset, sa: StrataAssignment | None = None,
                    params: CausalTreeParams = CausalTreeParams(), rng=None, *,
                    rows: np.ndarray | None = None, order: np.ndarray | None = None) -> CausalTree:
    """Greedy causal tree.

    ``rows`` optionally restricts fitting to a boolean subset (used for
    stochastic boosting); ``order`` lets callers reuse a precomputed
    column argsort of ``d.X``.
    """
    sa = uniform_strata(d.n) if sa is None else sa
    if len(sa.strata) != d.n:
        raise HTEError("strata and data disagree on n", code="dimension-mismatch")
    rng = as_rng(rng)
    X = d.X if d.X.flags.c_contiguous else np.ascontiguousarray(d.X)
    order = column_order(X) if order is None else order
    y = np.ascontiguousarray(d.y, dtype=float)
    t = d.t.astype(np.int64)
    s = sa.index.astype(np.int64)
    S = sa.S
    root = np.ones(d.n, dtype=bool) if rows is None else np.asarray(rows, dtype=bool)

    cnt = np.zeros((S, 2))
    np.add.at(cnt, (s[root], t[root]), 1.0)
    if not _viable(cnt, S, params.min_leaf_per_arm):
        raise RootNotViable(
            f"no stratum holds {params.min_leaf_per_arm} units of each arm at the root"
        )
    mtry = d.p if params.mtry is None else min(params.mtry, d.p)
    sample_feats = _feature_sampler(d.p, mtry, rng)

    def payload(w):
        m = w > 0
        tau, var, mu1, mu0, _ = stratified_effect(y[m], t[m], s[m], S, MIN_ARM_FOR_VARIANCE)
        return [mu1, mu0, mu1 - mu0, var, m.sum()]

    def find_split(w):
        f, thr, score = best_causal_split(
            X, order, w > 0, y, t, s, S, sample_feats(),
            float(params.min_leaf_per_arm), float(MIN_ARM_FOR_VARIANCE),
        )
        if f < 0 or not score > params.min_split_gain:
            return -1, 0.0
        return f, thr

    tree = grow_tree(X, order, root.astype(float), find_split, payload, params.max_depth)
    return CausalTree(tree, params, S)


def split_score(left: Dataset, right: Dataset, sa_left=None, sa_right=None) -> float:
    """T-statistic of a candidate split, evaluated directly on the two children."""
    a = leaf_estimate(left, sa_left)
    b = leaf_estimate(right, sa_right)
    diff = abs(a.tau - b.tau)
    den = a.var_tau + b.var_tau
    if den > 0:
        return diff / np.sqrt(den)
    return np.inf if diff > 0 else 0.0
