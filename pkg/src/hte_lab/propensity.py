"""Propensity scores, strata, the transformed outcome and ATE estimators."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.stats import binom

from .data import Dataset, validate_dataset
from .errors import HTEError, NoViableStratum, ScoreOutOfRange
from .forests import DEFAULT_CLIP, ForestParams, RegressionForest, fit_probability_forest

DEFAULT_STRATA = 10
PROPENSITY_PARAMS = ForestParams(n_trees=200, max_depth=6, min_leaf=10)


@dataclass(frozen=True, eq=False)
class StrataAssignment:
    """Scores and their stratum labels ``1..S`` on equal-width bins of [0, 1]."""

    scores: np.ndarray
    strata: np.ndarray
    S: int
    boundaries: np.ndarray

    @property
    def index(self) -> np.ndarray:
        """Zero-based stratum labels."""
        return self.strata - 1

    def subset(self, idx) -> "StrataAssignment":
        return StrataAssignment(self.scores[idx], self.strata[idx], self.S, self.boundaries)

    def assign(self, scores) -> np.ndarray:
        """Stratum labels (1..S) of new scores under the same boundaries."""
        return _label(np.asarray(scores, dtype=float), self.boundaries)


def _label(scores, boundaries):
    # half-open [b_{s-1}, b_s) except the last bin, which is closed
    return np.searchsorted(boundaries[1:-1], scores, side="right").astype(np.int64) + 1


def assign_strata(scores, S: int = DEFAULT_STRATA) -> StrataAssignment:
    scores = np.asarray(scores, dtype=float).ravel()
    if S < 1:
        raise HTEError("S must be >= 1", code="invalid-params")
    if np.any((scores < 0) | (scores > 1)) or not np.all(np.isfinite(scores)):
        raise ScoreOutOfRange("scores must lie in [0, 1]")
    boundaries = np.linspace(0.0, 1.0, S + 1)
    return StrataAssignment(scores, _label(scores, boundaries), S, boundaries)


def uniform_strata(n: int) -> StrataAssignment:
    """The trivial single-stratum assignment."""
    return assign_strata(np.full(n, 0.5), 1)


def fit_propensity(d: Dataset, params: ForestParams = PROPENSITY_PARAMS, rng=None,
                   clip: float = DEFAULT_CLIP) -> tuple[RegressionForest, np.ndarray]:
    """Probability forest for P(T=1 | X) and its out-of-bag training scores."""
    validate_dataset(d)
    forest = fit_probability_forest(d.X, d.t, params, rng, clip=clip)
    return forest, forest.oob_predict(d.X)


def estimate_propensity(d: Dataset, params: ForestParams = PROPENSITY_PARAMS, rng=None,
                        clip: float = DEFAULT_CLIP) -> np.ndarray:
    return fit_propensity(d, params, rng, clip)[1]


def _check_scores(scores, n):
    scores = np.asarray(scores, dtype=float).ravel()
    if scores.shape[0] != n:
        raise HTEError(f"{scores.shape[0]} scores for {n} units", code="dimension-mismatch")
    if np.any((scores <= 0) | (scores >= 1)) or not np.all(np.isfinite(scores)):
        raise ScoreOutOfRange("propensity scores must lie strictly inside (0, 1)")
    return scores


def transformed_outcome(d: Dataset, scores) -> np.ndarray:
    """Z = T*Y/pi - (1-T)*Y/(1-pi); its conditional mean is the effect."""
    pi = _check_scores(scores, d.n)
    t = d.t.astype(float)
    return t * d.y / pi - (1.0 - t) * d.y / (1.0 - pi)


# --------------------------------------------------------------------------
# average treatment effects


@dataclass(frozen=True)
class AteReport:
    estimate: float
    variance_estimate: float | None
    method: str


def stratified_effect(y, t, strata, S: int, min_arm: int = 1):
    """Stratum-size weighted contrast of arm means.

    ``strata`` holds zero-based labels. Only strata where both arms have at
    least ``min_arm`` units enter the sums. Returns ``(tau, var, mu1, mu0,
    n_used)``; ``var`` is NaN when some used stratum has a single-unit arm.
    """
    y = np.asarray(y, dtype=float)
    key = np.asarray(strata, dtype=np.int64) * 2 + np.asarray(t).astype(np.int64)
    cnt = np.bincount(key, minlength=2 * S).reshape(S, 2).astype(float)
    sm = np.bincount(key, weights=y, minlength=2 * S).reshape(S, 2)
    sq = np.bincount(key, weights=y * y, minlength=2 * S).reshape(S, 2)
    use = (cnt[:, 0] >= min_arm) & (cnt[:, 1] >= min_arm)
    if not use.any():
        raise NoViableStratum("no stratum has both arms represented")
    cnt, sm, sq = cnt[use], sm[use], sq[use]
    mean = sm / cnt
    ns = cnt.sum(axis=1)
    w = ns / ns.sum()
    mu1 = float(w @ mean[:, 1])
    mu0 = float(w @ mean[:, 0])
    if np.all(cnt >= 2):
        s2 = np.maximum(sq - sm * mean, 0.0) / (cnt - 1.0)
        sigma2 = s2[:, 1] / cnt[:, 1] + s2[:, 0] / cnt[:, 0]
        var = float((ns ** 2 * sigma2).sum() / ns.sum() ** 2)
    else:
        var = float("nan")
    return mu1 - mu0, var, mu1, mu0, int(ns.sum())


def ate_cm(d: Dataset) -> AteReport:
    validate_dataset(d)
    y1, y0 = d.y[d.t == 1], d.y[d.t == 0]
    var = None
    if len(y1) > 1 and len(y0) > 1:
        var = float(np.var(y1, ddof=1) / len(y1) + np.var(y0, ddof=1) / len(y0))
    return AteReport(float(y1.mean() - y0.mean()), var, "CM")


def ate_to(d: Dataset, scores) -> AteReport:
    validate_dataset(d)
    z = transformed_outcome(d, scores)
    return AteReport(float(z.mean()), float(np.var(z, ddof=1) / d.n), "TO")


def ate_ipw(d: Dataset, scores) -> AteReport:
    """Self-normalised (Hajek) inverse probability weighting."""
    validate_dataset(d)
    pi = _check_scores(scores, d.n)
    tr = d.t == 1
    w1 = 1.0 / pi[tr]
    w0 = 1.0 / (1.0 - pi[~tr])
    est = np.dot(w1, d.y[tr]) / w1.sum() - np.dot(w0, d.y[~tr]) / w0.sum()
    return AteReport(float(est), None, "IPW")


def ate_stratified(d: Dataset, sa: StrataAssignment) -> AteReport:
    validate_dataset(d)
    if len(sa.strata) != d.n:
        raise HTEError("strata and data disagree on n", code="dimension-mismatch")
    try:
        tau, var, *_ = stratified_effect(d.y, d.t, sa.index, sa.S, min_arm=1)
    except NoViableStratum as e:
        raise NoViableStratum(str(e), code="no-valid-stratum") from None
    return AteReport(float(tau), None if np.isnan(var) else var, "STRAT")


# --------------------------------------------------------------------------
# variance of the transformed-outcome vs conditional-mean ATE estimators


@dataclass(frozen=True)
class VarianceCell:
    n: int
    ratio: float
    var_to: float
    var_cm: float
    se_to: float
    se_cm: float
    reps: int


def _truncated_binomial(rng, n, size):
    """Binomial(n, 1/2) conditioned on 1 <= N <= n-1, by inversion."""
    k = np.arange(1, n)
    pmf = binom.pmf(k, n, 0.5)
    cdf = np.cumsum(pmf / pmf.sum())
    cdf[-1] = 1.0
    return k[np.searchsorted(cdf, rng.random(size), side="right")]


def _var_and_se(x):
    m = x.mean()
    c = x - m
    v = np.mean(c ** 2)
    m4 = np.mean(c ** 4)
    return float(v), float(np.sqrt(max(m4 - v * v, 0.0) / len(x)))


def ate_variance_study(n_values: Iterable[int] = (10, 30, 100, 300),
                       ratio_grid: Iterable[float] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5),
                       sigma: float = 1.0, reps: int = 100_000, seed: int = 0,
                       tau: float = 0.0) -> list[VarianceCell]:
    """Monte Carlo marginal variances of the TO and CM estimators under a
    randomized design, over a grid of sample sizes and main-effect/noise ratios.

    Each (n, ratio) cell gets its own random stream.
    """
    if reps < 1000:
        raise HTEError("reps must be >= 1000", code="invalid-params")
    n_values = [int(n) for n in n_values]
    ratio_grid = [float(r) for r in ratio_grid]
    out = []
    for i, n in enumerate(n_values):
        if n < 2:
            raise HTEError("n must be >= 2", code="invalid-params")
        for j, ratio in enumerate(ratio_grid):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i, j)))
            main = ratio * 2 * sigma  # mu1 + mu0
            mu1 = (main + tau) / 2
            mu0 = (main - tau) / 2
            n1 = _truncated_binomial(rng, n, reps)
            n0 = n - n1
            y1 = rng.normal(mu1, sigma / np.sqrt(n1))
            y0 = rng.normal(mu0, sigma / np.sqrt(n0))
            cm = y1 - y0
            to = n1 / (n / 2) * y1 - n0 / (n / 2) * y0
            v_to, se_to = _var_and_se(to)
            v_cm, se_cm = _var_and_se(cm)
            out.append(VarianceCell(n, ratio, v_to, v_cm, se_to, se_cm, reps))
    return out


def conditional_cm_variance(n: int, n1: int, sigma: float, reps: int, seed: int = 0) -> float:
    """Monte Carlo variance of the CM estimator with N1 held fixed.

    Unit-level responses are simulated and averaged, so this checks the
    sigma^2/N1 + sigma^2/N0 identity rather than assuming it.
    """
    rng = np.random.default_rng(seed)
    est = np.empty(reps)
    chunk = max(1, 2_000_000 // n)
    for start in range(0, reps, chunk):
        m = min(chunk, reps - start)
        y = rng.normal(0.0, sigma, size=(m, n))
        est[start:start + m] = y[:, :n1].mean(axis=1) - y[:, n1:].mean(axis=1)
    return float(np.var(est))


def write_variance_csv(cells: list[VarianceCell], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "ratio", "var_to", "var_cm", "reps"])
        for c in cells:
            w.writerow([c.n, repr(c.ratio), repr(c.var_to), repr(c.var_cm), c.reps])
