"""Synthetic scenarios, the benchmark runner and effect-reporting helpers.

Features alternate between standard normal (odd 1-based columns) and
Bernoulli(1/2) (even columns). Responses are
``Y ~ N(mu(X) + (T - 1/2) tau(X), sigma2)`` with ``mu`` and ``tau`` taken
from eight fixed test functions.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy.special import expit

from .baselines import fit_db_forest, fit_null, fit_to_forest
from .boosting import cross_validate_boost
from .causal_tree import CausalTreeParams
from .data import Dataset, as_matrix
from .errors import HTEError
from .forests import ForestParams, Tree, fit_regression_tree
from .mars import fit_bagged_causal_mars, fit_causal_mars
from .propensity import (DEFAULT_STRATA, PROPENSITY_PARAMS, StrataAssignment, assign_strata,
                         estimate_propensity, fit_propensity)
from .pto import fit_pto_forest

MIN_P = 9


# --------------------------------------------------------------------------
# test functions (x1 is column 0)


def _f1(X):
    return np.zeros(X.shape[0])


def _f2(X):
    return 5.0 * (X[:, 0] > 1) - 5.0


def _f3(X):
    return 2.0 * X[:, 0] - 4.0


def _f4(X):
    x2, x4, x6 = X[:, 1], X[:, 3], X[:, 5]
    return (x2 * x4 * x6 + 2 * x2 * x4 * (1 - x6) + 3 * x2 * (1 - x4) * x6
            + 4 * x2 * (1 - x4) * (1 - x6) + 5 * (1 - x2) * x4 * x6
            + 6 * (1 - x2) * x4 * (1 - x6) + 7 * (1 - x2) * (1 - x4) * x6
            + 8 * (1 - x2) * (1 - x4) * (1 - x6))


def _f5(X):
    return X[:, 0] + X[:, 2] + X[:, 4] + X[:, 6] + X[:, 7] + X[:, 8] - 2.0


def _f6(X):
    return (4.0 * (X[:, 0] > 1) * (X[:, 2] > 0) + 4.0 * (X[:, 4] > 1) * (X[:, 6] > 0)
            + 2.0 * X[:, 7] * X[:, 8])


def _f7(X):
    sq = X[:, [0, 2, 4, 6, 8]] ** 2
    return 0.5 * (sq.sum(axis=1) + X[:, 1] + X[:, 3] + X[:, 5] + X[:, 7] - 11.0)


def _f8(X):
    return (_f4(X) + _f5(X)) / math.sqrt(2.0)


_F = {1: _f1, 2: _f2, 3: _f3, 4: _f4, 5: _f5, 6: _f6, 7: _f7, 8: _f8}


def eval_f(k: int, x) -> np.ndarray | float:
    """Test function ``k`` (1..8) at a p-vector or at each row of a matrix."""
    if k not in _F:
        raise HTEError(f"unknown function f{k}", code="invalid-params")
    arr = np.asarray(x, dtype=float)
    X = as_matrix(arr)
    if X.shape[1] < MIN_P:
        raise HTEError(f"test functions need p >= {MIN_P}, got {X.shape[1]}", code="p-too-small")
    out = _F[k](X)
    return float(out[0]) if arr.ndim == 1 else out


def draw_features(n: int, p: int, rng) -> np.ndarray:
    if n < 1 or p < 1:
        raise HTEError("n and p must be >= 1", code="invalid-params")
    X = np.empty((n, p))
    n_odd = (p + 1) // 2
    X[:, 0::2] = rng.standard_normal((n, n_odd))
    X[:, 1::2] = (rng.random((n, p - n_odd)) < 0.5).astype(float)
    return X


def biased_propensity(mu, tau):
    """P(T=1) rising with the mean effect: logistic of ``mu - tau/2``."""
    return expit(np.asarray(mu, dtype=float) - np.asarray(tau, dtype=float) / 2.0)


# --------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class ScenarioSpec:
    id: int
    n: int
    p: int
    mu_fn: int
    tau_fn: int
    sigma2: float
    assignment: str  # "randomized" | "biased"

    def __post_init__(self):
        if self.assignment not in ("randomized", "biased"):
            raise HTEError("assignment must be randomized or biased", code="invalid-params")
        if self.p < MIN_P:
            raise HTEError(f"p must be >= {MIN_P}", code="p-too-small")

    @property
    def biased(self) -> bool:
        return self.assignment == "biased"


_BASE = [  # n, p, mu, tau, sigma2
    (200, 400, 8, 1, 1.0),
    (200, 400, 5, 2, 0.25),
    (300, 300, 4, 3, 1.0),
    (300, 300, 7, 4, 0.25),
    (400, 200, 3, 5, 1.0),
    (400, 200, 1, 6, 1.0),
    (1000, 100, 2, 7, 4.0),
    (1000, 100, 6, 8, 4.0),
]

SCENARIOS: dict[int, ScenarioSpec] = {}
for _i, (_n, _p, _mu, _tau, _s2) in enumerate(_BASE, start=1):
    SCENARIOS[_i] = ScenarioSpec(_i, _n, _p, _mu, _tau, _s2, "randomized")
    SCENARIOS[_i + 8] = ScenarioSpec(_i + 8, _n, _p, _mu, _tau, _s2, "biased")


def scenario(k: int) -> ScenarioSpec:
    try:
        return SCENARIOS[int(k)]
    except KeyError:
        raise HTEError(f"no scenario {k}; ids run 1..16", code="invalid-params") from None


def parse_ids(text: str) -> list[int]:
    """'1-3,8' -> [1, 2, 3, 8]."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                a, b = part.split("-", 1)
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise HTEError(f"bad id list {text!r}", code="invalid-params") from None
    return out


@dataclass(frozen=True, eq=False)
class SimDraw:
    dataset: Dataset
    tau_true: np.ndarray
    pi_true: np.ndarray
    mu_true: np.ndarray
    redraws: int = 0  # times T was redrawn because an arm came out empty


def _seed_seq(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _child(seq: np.random.SeedSequence, *key: int) -> np.random.SeedSequence:
    # unlike SeedSequence.spawn this leaves ``seq`` untouched, so reusing a
    # seed always reproduces the same draw
    return np.random.SeedSequence(seq.entropy, spawn_key=seq.spawn_key + key)


def respond(spec: ScenarioSpec, X: np.ndarray, seed, max_redraws: int = 1000) -> SimDraw:
    """Draw treatment and response for fixed features ``X``."""
    mu = eval_f(spec.mu_fn, X)
    tau = eval_f(spec.tau_fn, X)
    pi = biased_propensity(mu, tau) if spec.biased else np.full(X.shape[0], 0.5)
    seq = _seed_seq(seed)
    for redraws in range(max_redraws):
        t_rng = np.random.default_rng(_child(seq, 0, redraws))
        t = (t_rng.random(X.shape[0]) < pi).astype(np.int8)
        if 0 < t.sum() < len(t):
            break
    else:
        raise HTEError("could not draw both arms", code="degenerate-arm")
    y_rng = np.random.default_rng(_child(seq, 1))
    y = mu + (t - 0.5) * tau + math.sqrt(spec.sigma2) * y_rng.standard_normal(len(t))
    return SimDraw(Dataset(X, t, y), tau, pi, mu, redraws)


def generate(spec: ScenarioSpec, seed) -> SimDraw:
    """Features, treatment and response for one replicate.

    ``seed`` is an int, a sequence of ints, or a ``SeedSequence``.
    """
    seq = _seed_seq(seed)
    X = draw_features(spec.n, spec.p, np.random.default_rng(_child(seq, 0)))
    return respond(spec, X, _child(seq, 1))


def mse_effect(est, truth) -> float:
    est = np.asarray(est, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if est.shape != truth.shape:
        raise HTEError(f"lengths {len(est)} and {len(truth)} differ", code="length-mismatch")
    return float(np.mean((est - truth) ** 2))


# --------------------------------------------------------------------------
# methods


@dataclass(frozen=True)
class BenchConfig:
    """Hyperparameters shared by every benchmark method."""

    forest: ForestParams = field(default_factory=lambda: ForestParams(n_trees=100))
    propensity: ForestParams = field(
        default_factory=lambda: ForestParams(n_trees=100, max_depth=6, min_leaf=10))
    strata: int = DEFAULT_STRATA
    boost_K: int = 100
    boost_epsilon: float = 0.1
    boost_depth: int = 3
    folds: int = 5
    mars_D: int = 11
    mars_B: int = 50

    @classmethod
    def paper_scale(cls) -> "BenchConfig":
        return cls(forest=ForestParams(), propensity=PROPENSITY_PARAMS, boost_K=200,
                   boost_epsilon=0.05, mars_B=50)


class _Cell:
    """One (scenario, replicate): the draw plus lazily shared propensity scores."""

    def __init__(self, spec: ScenarioSpec, draw: SimDraw, cfg: BenchConfig, prop_seed: int):
        self.spec = spec
        self.draw = draw
        self.cfg = cfg
        self._prop_seed = prop_seed
        self._forest = None
        self._scores = None

    @property
    def d(self) -> Dataset:
        return self.draw.dataset

    def estimated(self):
        if self._scores is None:
            self._forest, self._scores = fit_propensity(self.d, self.cfg.propensity, self._prop_seed)
        return self._forest, self._scores

    def scores(self) -> np.ndarray:
        """1/2 in randomized scenarios, estimated (out of bag) otherwise."""
        if not self.spec.biased:
            return np.full(self.d.n, 0.5)
        return self.estimated()[1]

    def strata(self) -> StrataAssignment:
        return assign_strata(self.estimated()[1], self.cfg.strata)


def _null(c: _Cell, rng):
    return fit_null(c.d).predict_effect(c.d.X)


def _to(c: _Cell, rng):
    return fit_to_forest(c.d, c.scores(), c.cfg.forest, rng).predict_effect(c.d.X)


def _db(c: _Cell, rng):
    return fit_db_forest(c.d, c.cfg.forest, rng).predict_effect(c.d.X)


def _pto(c: _Cell, rng):
    return fit_pto_forest(c.d, c.scores(), c.cfg.forest, smooth=False, rng=rng).predict_effect(c.d.X)


def _boost(adjusted: bool):
    def run(c: _Cell, rng):
        sa = c.strata() if adjusted else None
        rep = cross_validate_boost(c.d, sa, c.cfg.folds, c.cfg.boost_K, c.cfg.boost_epsilon,
                                   CausalTreeParams(max_depth=c.cfg.boost_depth), rng)
        return rep.model.predict_effect(c.d.X)
    return run


def _mars(adjusted: bool):
    def run(c: _Cell, rng):
        if adjusted:
            sa = c.strata()
            m = fit_causal_mars(c.d, c.cfg.mars_D, sa, rng)
            return m.predict_effect(c.d.X, sa.strata)
        return fit_causal_mars(c.d, c.cfg.mars_D, None, rng).predict_effect(c.d.X)
    return run


def _bagged_mars(c: _Cell, rng):
    return fit_bagged_causal_mars(c.d, c.cfg.mars_D, c.cfg.mars_B, None, rng).predict_effect(c.d.X)


METHODS: dict[str, Callable[[_Cell, np.random.Generator], np.ndarray]] = {
    "null": _null,
    "to_forest": _to,
    "db_forest": _db,
    "pto": _pto,
    "causal_boost": _boost(False),
    "causal_boost_adj": _boost(True),
    "causal_mars": _mars(False),
    "causal_mars_adj": _mars(True),
    "bagged_causal_mars": _bagged_mars,
}

ALIASES = {
    "NULL": "null", "TO": "to_forest", "DB": "db_forest", "PTO": "pto", "PTO0": "pto",
    "CB0": "causal_boost", "CB1": "causal_boost_adj", "CM0": "causal_mars",
    "CM1": "causal_mars_adj", "BCM0": "bagged_causal_mars",
}


def method_tag(name: str) -> str:
    tag = ALIASES.get(name.strip(), name.strip())
    if tag not in METHODS:
        raise HTEError(f"unknown method {name!r}; known: {', '.join(METHODS)}", code="unknown-method")
    return tag


# --------------------------------------------------------------------------
# runner


@dataclass(frozen=True)
class BenchResult:
    scenario: int
    method: str
    rep: int
    seed: int
    mse: float
    wall_ms: float
    error: str | None = None


def data_seed(base_seed: int, scenario_id: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([base_seed, scenario_id, rep])


def method_seed(base_seed: int, scenario_id: int, rep: int, tag: str) -> int:
    key = zlib.crc32(tag.encode())
    return int(np.random.SeedSequence([base_seed, scenario_id, rep, key]).generate_state(1)[0])


def _propensity_seed(base_seed: int, scenario_id: int, rep: int) -> int:
    return method_seed(base_seed, scenario_id, rep, "propensity")


def _run_cell(spec: ScenarioSpec, rep: int, tags: list[str], base_seed: int,
              cfg: BenchConfig) -> list[BenchResult]:
    draw = generate(spec, data_seed(base_seed, spec.id, rep))
    cell = _Cell(spec, draw, cfg, _propensity_seed(base_seed, spec.id, rep))
    out = []
    for tag in tags:
        seed = method_seed(base_seed, spec.id, rep, tag)
        start = time.perf_counter()
        try:
            est = METHODS[tag](cell, np.random.default_rng(seed))
            mse, err = mse_effect(est, draw.tau_true), None
        except HTEError as exc:
            mse, err = float("nan"), f"{exc.code}: {exc}"
        wall = (time.perf_counter() - start) * 1000.0
        out.append(BenchResult(spec.id, tag, rep, seed, mse, wall, err))
    return out


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("HTE_LAB_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise HTEError("threads must be >= 1", code="invalid-params")
    return threads


def run_benchmark(spec_ids: Iterable[int], method_tags: Iterable[str], reps: int = 20,
                  base_seed: int = 0, cfg: BenchConfig = BenchConfig(),
                  threads: int | None = None, progress: Callable | None = None) -> list[BenchResult]:
    """Every method on every replicate of every scenario.

    Each (scenario, replicate) is one job; all methods see its single draw.
    Results come back sorted by scenario, replicate and method order, so they
    do not depend on ``threads``.
    """
    if reps < 1:
        raise HTEError("reps must be >= 1", code="invalid-params")
    specs = [scenario(k) for k in spec_ids]
    tags = [method_tag(m) for m in method_tags]
    jobs = [(s, r) for s in specs for r in range(reps)]
    threads = resolve_threads(threads)

    def job(sr):
        res = _run_cell(sr[0], sr[1], tags, base_seed, cfg)
        if progress is not None:
            progress(res)
        return res

    if threads == 1:
        chunks = [job(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            chunks = list(ex.map(job, jobs))
    return [r for chunk in chunks for r in chunk]


CSV_COLUMNS = ["scenario", "method", "rep", "seed", "mse", "wall_ms"]


def write_results_csv(results: list[BenchResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in results:
            w.writerow([r.scenario, r.method, r.rep, r.seed, repr(r.mse), f"{r.wall_ms:.3f}"])


def read_results_csv(path) -> list[BenchResult]:
    with open(path, newline="") as fh:
        return [BenchResult(int(row["scenario"]), row["method"], int(row["rep"]), int(row["seed"]),
                            float(row["mse"]), float(row["wall_ms"]))
                for row in csv.DictReader(fh)]


def summarize(results: list[BenchResult]) -> dict:
    """Per scenario and method: median and interquartile range of the MSE."""
    out: dict = {}
    keys = sorted({(r.scenario, r.method) for r in results}, key=lambda k: (k[0], list(METHODS).index(k[1])))
    for sc, m in keys:
        rows = [r for r in results if r.scenario == sc and r.method == m]
        ok = np.array([r.mse for r in rows if np.isfinite(r.mse)])
        entry = {"n": len(ok), "failed": len(rows) - len(ok)}
        if len(ok):
            q1, med, q3 = np.percentile(ok, [25, 50, 75])
            entry.update(median=float(med), q1=float(q1), q3=float(q3), iqr=float(q3 - q1))
        errors = sorted({r.error for r in rows if r.error})
        if errors:
            entry["errors"] = errors
        out.setdefault(str(sc), {})[m] = entry
    return out


def write_summary_json(results: list[BenchResult], path) -> None:
    with open(path, "w") as fh:
        json.dump(summarize(results), fh, indent=2, sort_keys=True)


def median_mse(results: list[BenchResult], scenario_id: int, method: str) -> float:
    vals = [r.mse for r in results if r.scenario == scenario_id and r.method == method_tag(method)]
    return float(np.median(vals))


# --------------------------------------------------------------------------
# raw vs pollinated transformed-outcome forests


def pollination_draw(n: int, p: int, biased: bool, rng) -> SimDraw:
    """Standard normal features; arm means 1 - x1 + x2 (treated) and x1 + x2
    (control), unit noise; P(T=1) = 1/2 or 1 / (1 + exp(x1 + x2))."""
    if p < 2:
        raise HTEError("need p >= 2", code="p-too-small")
    X = rng.standard_normal((n, p))
    pi = expit(-(X[:, 0] + X[:, 1])) if biased else np.full(n, 0.5)
    mu1 = 1.0 - X[:, 0] + X[:, 1]
    mu0 = X[:, 0] + X[:, 1]
    for redraws in range(1000):
        t = (rng.random(n) < pi).astype(np.int8)
        if 0 < t.sum() < n:
            break
    else:
        raise HTEError("could not draw both arms", code="degenerate-arm")
    y = np.where(t == 1, mu1, mu0) + rng.standard_normal(n)
    return SimDraw(Dataset(X, t, y), mu1 - mu0, pi, (mu1 + mu0) / 2.0, redraws)


@dataclass
class PollinationStudy:
    mse_raw: np.ndarray
    mse_pollinated: np.ndarray

    def summary(self) -> dict:
        r = len(self.mse_raw)
        return {k: (float(v.mean()), float(v.std(ddof=1) / math.sqrt(r)))
                for k, v in (("raw", self.mse_raw), ("pollinated", self.mse_pollinated))}


def pollination_study(reps: int = 50, biased: bool = False, seed: int = 0, n: int = 100,
                      p: int = 50, params: ForestParams = ForestParams(),
                      known_propensity: bool = True,
                      propensity_params: ForestParams = PROPENSITY_PARAMS) -> PollinationStudy:
    """In-sample effect MSE of the step-1 transformed-outcome forest and of
    the same forest after pollination, over ``reps`` fresh draws.

    With ``known_propensity`` the transformed outcome uses the true P(T=1);
    otherwise it uses out-of-bag probability-forest scores.
    """
    raw, pol = np.empty(reps), np.empty(reps)
    for r in range(reps):
        data_rng, prop_rng, fit_rng = (np.random.default_rng(s) for s in
                                       np.random.SeedSequence([seed, int(biased), r]).spawn(3))
        draw = pollination_draw(n, p, biased, data_rng)
        d = draw.dataset
        if known_propensity or not biased:
            scores = draw.pi_true
        else:
            scores = estimate_propensity(d, propensity_params, prop_rng)
        m = fit_pto_forest(d, scores, params, rng=fit_rng)
        raw[r] = mse_effect(m.predict_raw(d.X), draw.tau_true)
        pol[r] = mse_effect(m.predict_pollinated(d.X), draw.tau_true)
    return PollinationStudy(raw, pol)


# --------------------------------------------------------------------------
# bias study and reporting


@dataclass
class BiasStudy:
    truth: np.ndarray
    mean_estimate: dict[str, np.ndarray]
    reps: int

    def mean_abs_bias(self, method: str) -> float:
        key = method if method in self.mean_estimate else method_tag(method)
        return float(np.mean(np.abs(self.mean_estimate[key] - self.truth)))

    def rows(self):
        """(unit, truth, {method: mean estimate}) triples."""
        for i, t in enumerate(self.truth):
            yield i, float(t), {m: float(v[i]) for m, v in self.mean_estimate.items()}


def bias_study(spec: ScenarioSpec, method_tags: Iterable[str], reps: int = 25, seed: int = 0,
               cfg: BenchConfig = BenchConfig(), extra: dict | None = None) -> BiasStudy:
    """Fix the features once, redraw treatment and response ``reps`` times and
    average each method's per-unit estimates.

    ``extra`` maps names to callables ``(SimDraw, rng) -> estimates`` for
    methods outside the registry.
    """
    if reps < 2:
        raise HTEError("reps must be >= 2", code="invalid-params")
    tags = [method_tag(m) for m in method_tags]
    extra = extra or {}
    root = np.random.SeedSequence([seed, spec.id])
    X = draw_features(spec.n, spec.p, np.random.default_rng(_child(root, 0)))
    rep_seqs = [_child(root, 1, r) for r in range(reps)]
    sums = {m: np.zeros(spec.n) for m in [*tags, *extra]}
    truth = None
    for r, rs in enumerate(rep_seqs):
        draw = respond(spec, X, rs)
        truth = draw.tau_true
        cell = _Cell(spec, draw, cfg, _propensity_seed(seed, spec.id, r))
        for tag in tags:
            sums[tag] += METHODS[tag](cell, np.random.default_rng(method_seed(seed, spec.id, r, tag)))
        for name, fn in extra.items():
            sums[name] += fn(draw, np.random.default_rng(method_seed(seed, spec.id, r, name)))
    return BiasStudy(truth, {m: s / reps for m, s in sums.items()}, reps)


@dataclass(frozen=True)
class BinRow:
    bin: int
    lo: float
    hi: float
    mean: float
    se: float
    count: int


def binned_effect_report(estimates, feature, n_bins: int = 10) -> list[BinRow]:
    """Equal-count bins of ``feature``; mean and standard error of the
    estimates in each."""
    est = np.asarray(estimates, dtype=float).ravel()
    f = np.asarray(feature, dtype=float).ravel()
    if est.shape != f.shape:
        raise HTEError("estimates and feature differ in length", code="length-mismatch")
    if n_bins < 1:
        raise HTEError("n_bins must be >= 1", code="invalid-params")
    order = np.argsort(f, kind="stable")
    rows = []
    for b, idx in enumerate(np.array_split(order, min(n_bins, len(f)))):
        e = est[idx]
        se = float(np.std(e, ddof=1) / np.sqrt(len(e))) if len(e) > 1 else 0.0
        rows.append(BinRow(b + 1, float(f[idx].min()), float(f[idx].max()), float(e.mean()), se, len(e)))
    return rows


def summarize_with_tree(X, tau_hat, max_depth: int = 3, min_leaf: int = 20) -> Tree:
    """Shallow regression tree on the estimated effects, for reading them."""
    X = as_matrix(X)
    params = ForestParams(n_trees=1, max_depth=max_depth, min_leaf=min_leaf, mtry=X.shape[1],
                          bootstrap=False)
    return fit_regression_tree(X, tau_hat, params)
