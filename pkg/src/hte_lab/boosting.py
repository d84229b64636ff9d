"""Causal boosting: a shrunk stagewise sum of causal trees fit to residuals.

Validation re-estimates every tree's leaves on held-out data (pollination),
building a second sequence of models from the held-out responses; each
candidate size is scored against the largest of those.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import column_order
from .causal_tree import CausalTree, CausalTreeParams, fit_causal_tree
from .data import Dataset, EffectModel, as_matrix, as_rng, validate_dataset
from .errors import HTEError, OutOfRange, RootNotViable
from .forests import pollinate
from .propensity import StrataAssignment, uniform_strata


@dataclass(frozen=True)
class BoostParams:
    K: int = 200
    epsilon: float = 0.05
    tree: CausalTreeParams = field(default_factory=CausalTreeParams)
    subsample: float = 1.0  # < 1 turns on stochastic boosting

    def __post_init__(self):
        if self.K < 1:
            raise HTEError("K must be >= 1", code="invalid-params")
        if not 0.0 <= self.epsilon <= 1.0:
            raise HTEError("epsilon must lie in [0, 1]", code="invalid-params")
        if not 0.0 < self.subsample <= 1.0:
            raise HTEError("subsample must lie in (0, 1]", code="invalid-params")


@dataclass(eq=False)
class BoostModel(EffectModel):
    trees: list[CausalTree]
    epsilon: float
    n_strata: int = 1
    propensity: object | None = None  # fitted propensity forest, when adjusted

    @property
    def K(self) -> int:
        return len(self.trees)

    def stage_means(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Per-tree pair predictions, each of shape (K, m), unshrunk."""
        X = as_matrix(X)
        if not self.trees:
            z = np.zeros((0, X.shape[0]))
            return z, z
        pairs = [t.predict_means(X) for t in self.trees]
        return np.vstack([p[0] for p in pairs]), np.vstack([p[1] for p in pairs])

    def predict_means(self, X, k: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        X = as_matrix(X)
        k = self.K if k is None else k
        if not 1 <= k <= self.K:
            raise OutOfRange(f"k={k} outside 1..{self.K}", code="k-out-of-range")
        g1, g0 = self.stage_means(X)
        return self.epsilon * g1[:k].sum(axis=0), self.epsilon * g0[:k].sum(axis=0)

    def staged_effects(self, X) -> np.ndarray:
        """(K, m) effect of the model truncated after each tree."""
        g1, g0 = self.stage_means(X)
        return self.epsilon * np.cumsum(g1 - g0, axis=0)

    def truncate(self, k: int) -> "BoostModel":
        return BoostModel(self.trees[:k], self.epsilon, self.n_strata, self.propensity)


def predict_boost(m: BoostModel, x, k: int) -> tuple[np.ndarray, np.ndarray]:
    return m.predict_means(x, k)


def fit_causal_boost(d: Dataset, sa: StrataAssignment | None = None, K: int = 200,
                     epsilon: float = 0.05, tree_params: CausalTreeParams = CausalTreeParams(),
                     rng=None, subsample: float = 1.0) -> BoostModel:
    """Fit ``K`` causal trees in sequence, each to the running residuals.

    Stops early (returning fewer trees) when a stage has no viable root,
    which only happens under row subsampling.
    """
    validate_dataset(d)
    BoostParams(K, epsilon, tree_params, subsample)
    sa = uniform_strata(d.n) if sa is None else sa
    rng = as_rng(rng)
    X = np.ascontiguousarray(d.X)
    order = column_order(X)
    t = d.t.astype(bool)
    resid = d.y.copy()
    trees = []
    for k in range(K):
        rows = None
        if subsample < 1.0:
            rows = rng.random(d.n) < subsample
        try:
            tree = fit_causal_tree(d.with_response(resid), sa, tree_params, rng,
                                   rows=rows, order=order)
        except RootNotViable:
            if k == 0 and rows is None:
                raise
            break
        mu1, mu0 = tree.predict_means(X)
        resid = resid - epsilon * np.where(t, mu1, mu0)
        trees.append(tree)
    return BoostModel(trees, epsilon, sa.S)


@dataclass
class BoostCvReport:
    per_k_error: np.ndarray
    k_star: int
    model: BoostModel | None = None
    fold_errors: np.ndarray | None = None


def validation_effects(m: BoostModel, v: Dataset, sa_v: StrataAssignment | None = None) -> np.ndarray:
    """Effect at the validation points of the fully pollinated sequence H_K."""
    sa_v = uniform_strata(v.n) if sa_v is None else sa_v
    resid = v.y.astype(float).copy()
    t = v.t.astype(bool)
    h1 = np.zeros(v.n)
    h0 = np.zeros(v.n)
    for tree in m.trees:
        pt = pollinate(tree.tree, v.X, v.t, resid, sa_v.index, sa_v.S, min_arm=1)
        mu1, mu0 = pt.predict_means(v.X)
        resid = resid - m.epsilon * np.where(t, mu1, mu0)
        h1 += mu1
        h0 += mu0
    return m.epsilon * (h1 - h0)


def validate_boost(m: BoostModel, v: Dataset, sa_v: StrataAssignment | None = None) -> BoostCvReport:
    """Squared distance between each truncated model's effects and the
    saturated validation model's effects, summed over validation points."""
    if v.n == 0:
        raise HTEError("empty validation set", code="empty-validation-set")
    if m.K == 0:
        raise HTEError("model has no trees", code="empty-model")
    target = validation_effects(m, v, sa_v)
    staged = m.staged_effects(v.X)
    err = ((staged - target) ** 2).sum(axis=1)
    return BoostCvReport(err, int(np.argmin(err)) + 1)


def arm_stratified_folds(t, folds: int, rng) -> np.ndarray:
    """Fold label per unit, dealing each arm round-robin after a shuffle."""
    t = np.asarray(t).astype(bool)
    fold = np.empty(len(t), dtype=np.int64)
    offset = 0
    for arm in (True, False):
        idx = np.flatnonzero(t == arm)
        idx = idx[rng.permutation(len(idx))]
        fold[idx] = (np.arange(len(idx)) + offset) % folds
        offset += len(idx)
    return fold


def cross_validate_boost(d: Dataset, sa: StrataAssignment | None = None, folds: int = 5,
                         K: int = 200, epsilon: float = 0.05,
                         tree_params: CausalTreeParams = CausalTreeParams(), rng=None,
                         subsample: float = 1.0, refit: bool = True) -> BoostCvReport:
    """K-fold choice of the number of trees, then a refit on all the data."""
    validate_dataset(d)
    if folds < 2:
        raise HTEError("folds must be >= 2", code="invalid-params")
    if min(d.n_treated, d.n_control) < folds:
        raise HTEError(f"an arm has fewer than {folds} units", code="fold-too-small")
    sa = uniform_strata(d.n) if sa is None else sa
    rng = as_rng(rng)
    fold_rng, *fit_rngs = rng.spawn(folds + 2)
    fold = arm_stratified_folds(d.t, folds, fold_rng)
    errors = np.empty((folds, K))
    for f in range(folds):
        tr, va = fold != f, fold == f
        try:
            m = fit_causal_boost(d.subset(tr), sa.subset(tr), K, epsilon, tree_params,
                                 fit_rngs[f], subsample)
        except RootNotViable as exc:
            raise HTEError(f"fold {f}: {exc}", code="fold-too-small") from exc
        e = validate_boost(m, d.subset(va), sa.subset(va)).per_k_error
        errors[f, : len(e)] = e
        errors[f, len(e):] = e[-1]  # a truncated fit stays constant past its end
    mean = errors.mean(axis=0)
    k_star = int(np.argmin(mean)) + 1  # argmin takes the first (smallest k) on ties
    model = None
    if refit:
        model = fit_causal_boost(d, sa, k_star, epsilon, tree_params, fit_rngs[folds], subsample)
    return BoostCvReport(mean, k_star, model, errors)
