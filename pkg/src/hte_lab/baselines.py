"""Comparison estimators: the null difference of means, the raw
transformed-outcome forest and separate per-arm forests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, EffectModel, arm_means, as_matrix, as_rng, validate_dataset
from .errors import HTEError
from .forests import ForestParams, RegressionForest, fit_regression_forest
from .pto import fit_transformed_outcome_forest


@dataclass(frozen=True, eq=False)
class NullModel(EffectModel):
    mu1: float
    mu0: float

    @property
    def effect(self) -> float:
        return self.mu1 - self.mu0

    def predict_means(self, X) -> tuple[np.ndarray, np.ndarray]:
        n = as_matrix(X).shape[0]
        return np.full(n, self.mu1), np.full(n, self.mu0)


def fit_null(d: Dataset) -> NullModel:
    validate_dataset(d)
    return NullModel(*arm_means(d.y, d.t))


@dataclass(eq=False)
class ToForest:
    """Forest on the transformed outcome; predicts effects only."""

    forest: RegressionForest

    def predict_effect(self, X) -> np.ndarray:
        return self.forest.predict(as_matrix(X))

    def predict_means(self, X):
        raise HTEError("the transformed-outcome forest has no arm means", code="means-unavailable")


def fit_to_forest(d: Dataset, scores, params: ForestParams = ForestParams(), rng=None) -> ToForest:
    return ToForest(fit_transformed_outcome_forest(d, scores, params, rng))


@dataclass(eq=False)
class DbForest(EffectModel):
    forest1: RegressionForest
    forest0: RegressionForest

    def predict_means(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = as_matrix(X)
        return self.forest1.predict(X), self.forest0.predict(X)


def fit_db_forest(d: Dataset, params: ForestParams = ForestParams(), rng=None) -> DbForest:
    """One forest per arm, each fit only on that arm's rows."""
    validate_dataset(d)
    need = 2 * params.min_leaf if params.max_depth > 0 else 1
    if min(d.n_treated, d.n_control) < need:
        raise HTEError(f"each arm needs at least {need} rows", code="arm-too-small")
    r1, r0 = as_rng(rng).spawn(2)
    tr = d.t == 1
    f1 = fit_regression_forest(d.X[tr], d.y[tr], params, r1)
    f0 = fit_regression_forest(d.X[~tr], d.y[~tr], params, r0)
    return DbForest(f1, f0)
