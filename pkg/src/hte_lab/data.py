"""Core data model: the ``Dataset`` record and the effect-model contract."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateArm, DimensionMismatch, NonFiniteValue, DatasetError


@dataclass(frozen=True, eq=False)
class Dataset:
    """Features ``X`` (n x p), binary treatment ``t`` and real response ``y``.

    The arrays are copied, cast and frozen on construction. Binary covariates
    are plain 0.0/1.0 columns.
    """

    X: np.ndarray
    t: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float, copy=True)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        t_raw = np.asarray(self.t)
        y = np.array(self.y, dtype=float, copy=True).ravel()
        if X.ndim != 2:
            raise DimensionMismatch(f"features must be a matrix, got ndim={X.ndim}")
        n, p = X.shape
        if t_raw.ndim != 1 or t_raw.shape[0] != n or y.shape[0] != n:
            raise DimensionMismatch(
                f"features have {n} rows but treatment has {t_raw.size} and response {y.size}"
            )
        if n < 2 or p < 1:
            raise DimensionMismatch(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        if not np.all(np.isin(t_raw, (0, 1))):
            raise DatasetError("treatment must contain only 0/1", code="invalid-treatment")
        if not np.all(np.isfinite(X)):
            raise NonFiniteValue("features contain non-finite values")
        if not np.all(np.isfinite(y)):
            raise NonFiniteValue("response contains non-finite values")
        names = self.feature_names
        if names is not None:
            names = tuple(str(s) for s in names)
            if len(names) != p:
                raise DimensionMismatch(f"{len(names)} feature names for {p} columns")
        t = t_raw.astype(np.int8)
        for a in (X, t, y):
            a.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.t.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    def subset(self, idx) -> "Dataset":
        """Rows ``idx`` (index array or boolean mask) as a new dataset."""
        return Dataset(self.X[idx], self.t[idx], self.y[idx], self.feature_names)

    def with_response(self, y) -> "Dataset":
        return Dataset(self.X, self.t, y, self.feature_names)


def validate_dataset(d: Dataset) -> None:
    """Raise unless ``d`` is usable for fitting.

    Construction already enforces shapes and finiteness; this adds the
    requirement that both arms are present.
    """
    if not isinstance(d, Dataset):
        raise DatasetError(f"expected a Dataset, got {type(d).__name__}")
    if d.n_treated == 0 or d.n_control == 0:
        raise DegenerateArm(
            f"need both arms, got {d.n_treated} treated and {d.n_control} control units"
        )


def as_matrix(x, p: int | None = None) -> np.ndarray:
    """Coerce a p-vector or an (m, p) array to a 2-d float matrix."""
    X = np.asarray(x, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if p is not None and X.shape[1] != p:
        raise DimensionMismatch(f"expected {p} features, got {X.shape[1]}")
    return X


@dataclass
class EffectEstimates:
    tau_hat: np.ndarray
    mu1_hat: np.ndarray | None = None
    mu0_hat: np.ndarray | None = None


class EffectModel:
    """Mixin for fitted estimators that return a pair of arm-specific means.

    Subclasses implement ``predict_means``; the effect is always derived from
    it so the two readouts can never disagree.
    """

    def predict_means(self, X) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def predict_effect(self, X) -> np.ndarray:
        mu1, mu0 = self.predict_means(X)
        return mu1 - mu0

    def estimates(self, X) -> EffectEstimates:
        mu1, mu0 = self.predict_means(X)
        return EffectEstimates(mu1 - mu0, mu1, mu0)


def arm_means(y: np.ndarray, t: np.ndarray) -> tuple[float, float]:
    t = np.asarray(t).astype(bool)
    if t.all() or not t.any():
        raise DegenerateArm("both arms must be non-empty")
    return float(y[t].mean()), float(y[~t].mean())


def as_rng(rng=None) -> np.random.Generator:
    """A Generator from a seed, a Generator, or None (seed 0: never OS entropy)."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(0 if rng is None else rng)
