"""Pollinated transformed-outcome (PTO) forests.

A forest is grown on the transformed outcome, each tree's leaves are then
re-estimated with the arm means of the raw responses, and optionally a second
forest smooths the resulting per-unit effects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, EffectModel, as_matrix, as_rng, validate_dataset
from .errors import HTEError
from .forests import (ForestParams, PairTree, RegressionForest, fit_regression_forest,
                      pollinate_tree)
from .propensity import transformed_outcome


def fit_transformed_outcome_forest(d: Dataset, scores, params: ForestParams = ForestParams(),
                                   rng=None) -> RegressionForest:
    """Forest on Z; shared by the PTO fit and the raw TO baseline."""
    validate_dataset(d)
    z = transformed_outcome(d, scores)
    return fit_regression_forest(d.X, z, params, _streams(rng)[0])


def _streams(rng):
    # (forest stream, smoother stream)
    return as_rng(rng).spawn(2)


@dataclass(eq=False)
class PtoModel(EffectModel):
    pair_forest: list[PairTree]
    raw_forest: RegressionForest
    smoother: RegressionForest | None = None

    def predict_pollinated_means(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = as_matrix(X)
        mu1 = np.zeros(X.shape[0])
        mu0 = np.zeros(X.shape[0])
        for pt in self.pair_forest:
            a, b = pt.predict_means(X)
            mu1 += a
            mu0 += b
        k = len(self.pair_forest)
        return mu1 / k, mu0 / k

    def predict_means(self, X) -> tuple[np.ndarray, np.ndarray]:
        if self.smoother is not None:
            raise HTEError("a smoothed PTO model predicts effects only", code="means-unavailable")
        return self.predict_pollinated_means(X)

    def predict_effect(self, X) -> np.ndarray:
        if self.smoother is not None:
            return self.smoother.predict(as_matrix(X))
        mu1, mu0 = self.predict_pollinated_means(X)
        return mu1 - mu0

    def predict_pollinated(self, X) -> np.ndarray:
        mu1, mu0 = self.predict_pollinated_means(X)
        return mu1 - mu0

    def predict_raw(self, X) -> np.ndarray:
        """Step-1 readout: the forest's mean transformed outcome."""
        return self.raw_forest.predict(as_matrix(X))


def _oob_tree_effects(pairs: list[PairTree], inbag, X) -> np.ndarray:
    eff = np.vstack([pt.predict_effect(X) for pt in pairs])
    if inbag is None:
        return eff.mean(axis=0)
    oob = inbag == 0
    cnt = oob.sum(axis=0)
    tot = np.where(oob, eff, 0.0).sum(axis=0)
    return np.where(cnt > 0, tot / np.maximum(cnt, 1), eff.mean(axis=0))


def fit_pto_forest(d: Dataset, scores, params: ForestParams = ForestParams(), smooth: bool = False,
                   rng=None, smoother_params: ForestParams | None = None) -> PtoModel:
    """Grow a forest on Z, pollinate every tree with (X, T, Y), optionally smooth.

    The smoother is trained on per-unit effects averaged over the trees for
    which the unit was out of bag.
    """
    validate_dataset(d)
    forest_rng, smooth_rng = _streams(rng)
    forest = fit_regression_forest(d.X, transformed_outcome(d, scores), params, forest_rng)
    pairs = [pollinate_tree(tree, d) for tree in forest.trees]
    smoother = None
    if smooth:
        tau_i = _oob_tree_effects(pairs, forest.inbag, d.X)
        smoother = fit_regression_forest(d.X, tau_i, smoother_params or params, smooth_rng)
    return PtoModel(pairs, forest, smoother)


def predict_pto(m: PtoModel, x) -> np.ndarray:
    return m.predict_effect(x)
