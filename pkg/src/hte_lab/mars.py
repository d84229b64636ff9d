"""Causal MARS: one hinge basis shared by both arms, arm-specific coefficients.

Terms enter by how much better they explain the residuals with separate
treated/control coefficients than with one shared coefficient. Under
propensity adjustment the same basis is fit separately inside groups of
adjacent propensity strata and the entry criterion is the size-weighted sum
over groups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernels import column_order, mars_candidate_gains
from .data import Dataset, EffectModel, as_matrix, as_rng, validate_dataset
from .errors import DegenerateArm, HTEError
from .propensity import StrataAssignment

MAX_DEGREE = 3
MAX_KNOTS = 32
SPAN_ALPHA = 0.05


@dataclass(frozen=True)
class Hinge:
    feature: int
    knot: float
    sign: int  # +1: (x - knot)_+, -1: (knot - x)_+

    def __call__(self, X) -> np.ndarray:
        return np.maximum(self.sign * (X[:, self.feature] - self.knot), 0.0)


@dataclass(frozen=True)
class BasisFunction:
    """Product of hinges; the empty product is the constant 1."""

    terms: tuple[Hinge, ...] = ()

    @property
    def degree(self) -> int:
        return len(self.terms)

    @property
    def features(self) -> frozenset[int]:
        return frozenset(h.feature for h in self.terms)

    def __call__(self, X) -> np.ndarray:
        X = as_matrix(X)
        out = np.ones(X.shape[0])
        for h in self.terms:
            out = out * h(X)
        return out

    def times(self, h: Hinge) -> "BasisFunction":
        return BasisFunction(self.terms + (h,))


CONSTANT = BasisFunction()


def basis_matrix(basis: list[BasisFunction], X) -> np.ndarray:
    X = as_matrix(X)
    return np.column_stack([b(X) for b in basis]) if basis else np.zeros((X.shape[0], 0))


@dataclass(frozen=True)
class MarsParams:
    D: int = 11
    max_degree: int = MAX_DEGREE
    max_knots: int = MAX_KNOTS
    prune: bool = True
    min_group_arm: int | None = None  # None -> 1 + 2D, so every cell's fit is determined
    min_span: int | None = None  # None -> end-span rule 3 - log2(alpha / p), alpha = 0.05

    def __post_init__(self):
        if self.D < 1:
            raise HTEError("D must be >= 1", code="invalid-params")
        if not 1 <= self.max_degree <= MAX_DEGREE:
            raise HTEError(f"max_degree must lie in 1..{MAX_DEGREE}", code="invalid-params")
        if self.max_knots < 1:
            raise HTEError("max_knots must be >= 1", code="invalid-params")

    def span(self, p: int) -> int:
        if self.min_span is not None:
            return self.min_span
        return int(math.ceil(3.0 - math.log2(SPAN_ALPHA / p)))

    @property
    def group_arm(self) -> int:
        return 1 + 2 * self.D if self.min_group_arm is None else self.min_group_arm


# --------------------------------------------------------------------------
# strata -> groups


def merge_strata(strata0, t, S: int, min_arm: int) -> np.ndarray:
    """Map each of ``S`` strata (zero-based) to a group of adjacent strata in
    which both arms have at least ``min_arm`` units.

    Strata are swept upward; a run closes once it is big enough, and a short
    run left at the top joins the group below it.
    """
    t = np.asarray(t).astype(np.int64)
    cnt = np.zeros((S, 2), dtype=np.int64)
    np.add.at(cnt, (np.asarray(strata0, dtype=np.int64), t), 1)
    group = np.zeros(S, dtype=np.int64)
    g = 0
    acc = np.zeros(2, dtype=np.int64)
    for s in range(S):
        group[s] = g
        acc += cnt[s]
        if acc.min() >= min_arm:
            g += 1
            acc[:] = 0
    if g > 0:
        group[group == g] = g - 1  # an unfinished top run (possibly all empty strata)
    return group


# --------------------------------------------------------------------------
# least squares helpers


def _ridge_solve(G, v):
    k = G.shape[0]
    if k == 0:
        return np.zeros(0)
    lam = 1e-8 * max(np.trace(G) / k, 1e-300)
    A = G + lam * np.eye(k)
    try:
        return np.linalg.solve(A, v)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A, v, rcond=None)[0]


def _rss(G, v, yy, idx):
    if len(idx) == 0:
        return yy
    sub = G[np.ix_(idx, idx)]
    b = v[idx]
    beta = _ridge_solve(sub, b)
    return yy - 2.0 * beta @ b + beta @ sub @ beta


@dataclass
class _GroupGram:
    """Sufficient statistics for the arm-specific and shared fits in one group."""

    n: float
    tau: list  # per arm (G, v, yy) on the basis columns
    mu: tuple  # (G, v, yy) on [treated indicator, control indicator, basis[1:]]

    @classmethod
    def build(cls, Bm, y, t):
        tau = []
        for a in (0, 1):
            m = t == a
            Ba = Bm[m]
            tau.append((Ba.T @ Ba, Ba.T @ y[m], float(y[m] @ y[m])))
        E = np.column_stack([t.astype(float), 1.0 - t, Bm[:, 1:]])
        return cls(float(len(y)), tau, (E.T @ E, E.T @ y, float(y @ y)))

    def drss(self, cols) -> float:
        """Shared minus arm-specific RSS using basis columns ``cols`` (incl. 0)."""
        rss_tau = sum(_rss(G, v, yy, cols) for G, v, yy in self.tau)
        mu_cols = [0, 1] + [c + 1 for c in cols if c != 0]
        G, v, yy = self.mu
        return _rss(G, v, yy, mu_cols) - rss_tau


def heterogeneity_quality(grams: list[_GroupGram], cols) -> float:
    """Size-weighted sum over groups of the shared-vs-arm-specific RSS gap."""
    return float(sum(g.n * g.drss(cols) for g in grams))


def _cell_coefficients(Bm, y, t, group, n_groups, cols) -> np.ndarray:
    """(n_groups, 2, len(cols)) least-squares coefficients per group and arm."""
    coef = np.zeros((n_groups, 2, len(cols)))
    for g in range(n_groups):
        for a in (0, 1):
            m = (group == g) & (t == a)
            B = Bm[m][:, cols]
            coef[g, a] = _ridge_solve(B.T @ B, B.T @ y[m])
    return coef


# --------------------------------------------------------------------------
# model


@dataclass(eq=False)
class MarsModel(EffectModel):
    basis: list[BasisFunction]
    coef: np.ndarray  # (n_groups, 2, m); [:, 1] treated, [:, 0] control
    group_of_stratum: np.ndarray | None = None  # zero-based stratum -> group
    boundaries: np.ndarray | None = None
    propensity: object | None = None  # forest used to stratify new points
    path_sizes: np.ndarray | None = None
    oob_error: np.ndarray | None = None

    @property
    def stratified(self) -> bool:
        return self.group_of_stratum is not None

    @property
    def coef1(self) -> np.ndarray:
        return self.coef[:, 1] if self.stratified else self.coef[0, 1]

    @property
    def coef0(self) -> np.ndarray:
        return self.coef[:, 0] if self.stratified else self.coef[0, 0]

    def groups(self, X, strata=None) -> np.ndarray:
        """Group index per row; ``strata`` holds labels in 1..S."""
        n = as_matrix(X).shape[0]
        if not self.stratified:
            return np.zeros(n, dtype=np.int64)
        if strata is None:
            if self.propensity is None:
                raise HTEError("stratified model needs a stratum per point", code="missing-stratum")
            scores = self.propensity.predict(as_matrix(X))
            strata = np.searchsorted(self.boundaries[1:-1], scores, side="right") + 1
        strata = np.asarray(strata, dtype=np.int64).ravel()
        if len(strata) != n:
            raise HTEError("one stratum label per point is needed", code="dimension-mismatch")
        if strata.min() < 1 or strata.max() > len(self.group_of_stratum):
            raise HTEError("stratum label out of range", code="missing-stratum")
        return self.group_of_stratum[strata - 1]

    def predict_means(self, X, strata=None) -> tuple[np.ndarray, np.ndarray]:
        X = as_matrix(X)
        Bm = basis_matrix(self.basis, X)
        g = self.groups(X, strata)
        c = self.coef[g]  # (n, 2, m)
        return (Bm * c[:, 1]).sum(axis=1), (Bm * c[:, 0]).sum(axis=1)

    def predict_effect(self, X, strata=None) -> np.ndarray:
        mu1, mu0 = self.predict_means(X, strata)
        return mu1 - mu0


@dataclass(eq=False)
class BaggedMars(EffectModel):
    models: list[MarsModel]
    indices: list[np.ndarray] = field(default_factory=list)

    @property
    def B(self) -> int:
        return len(self.models)

    def predict_means(self, X, strata=None) -> tuple[np.ndarray, np.ndarray]:
        X = as_matrix(X)
        pairs = [m.predict_means(X, strata) for m in self.models]
        return (np.mean([a for a, _ in pairs], axis=0),
                np.mean([b for _, b in pairs], axis=0))

    def predict_effect(self, X, strata=None) -> np.ndarray:
        mu1, mu0 = self.predict_means(X, strata)
        return mu1 - mu0


def predict_mars(m: MarsModel | BaggedMars, x, strata=None):
    """Arm means (averaged over members for a bagged model)."""
    return m.predict_means(x, strata)


# --------------------------------------------------------------------------
# fitting


def candidate_knots(X, max_knots: int = MAX_KNOTS) -> tuple[np.ndarray, np.ndarray]:
    """Observed values usable as knots: distinct values below the column max,
    thinned to ``max_knots`` quantile-spaced ones."""
    p = X.shape[1]
    knots = np.zeros((p, max_knots))
    n_knots = np.zeros(p, dtype=np.int64)
    for j in range(p):
        u = np.unique(X[:, j])[:-1]
        if len(u) > max_knots:
            u = u[np.round(np.linspace(0, len(u) - 1, max_knots)).astype(np.int64)]
        knots[j, : len(u)] = u
        n_knots[j] = len(u)
    return knots, n_knots


@dataclass
class _Problem:
    X: np.ndarray
    y: np.ndarray
    t: np.ndarray
    group: np.ndarray  # per row
    n_groups: int

    @property
    def cell(self) -> np.ndarray:
        return 2 * self.group + self.t

    @property
    def group_weight(self) -> np.ndarray:
        return np.bincount(self.group, minlength=self.n_groups).astype(float)


def forward_pass(pb: _Problem, params: MarsParams):
    """Stagewise entry of ``D`` hinge pairs.

    Returns the basis, its matrix on the training rows and the stagewise
    coefficients, shaped (n_groups, 2, m).
    """
    X, n = pb.X, len(pb.y)
    order = column_order(X)
    knots, n_knots = candidate_knots(X, params.max_knots)
    cell = pb.cell
    n_cells = 2 * pb.n_groups
    weight = pb.group_weight
    # arm (and group) specific intercepts
    cnt = np.bincount(cell, minlength=n_cells)
    mean = np.bincount(cell, weights=pb.y, minlength=n_cells) / np.maximum(cnt, 1)
    r = pb.y - mean[cell]
    basis = [CONSTANT]
    cols = [np.ones(n)]
    stage = [mean.copy()]  # per-cell coefficient of each column, as fit stagewise
    for _ in range(params.D):
        Bm = np.column_stack(cols)
        allowed = np.zeros((len(basis), X.shape[1]), dtype=np.bool_)
        for b, bf in enumerate(basis):
            if bf.degree < params.max_degree:
                allowed[b] = True
                allowed[b, list(bf.features)] = False
        gains = mars_candidate_gains(X, order, Bm, allowed, knots, n_knots, r, cell,
                                     pb.n_groups, weight, float(params.span(X.shape[1])))
        flat = int(np.argmax(gains))  # first maximum: lowest parent, feature, knot
        if not np.isfinite(gains.flat[flat]):
            break
        b, j, k = np.unravel_index(flat, gains.shape)
        c = float(knots[j, k])
        for sign in (1, -1):
            bf = basis[b].times(Hinge(int(j), c, sign))
            h = Bm[:, b] * np.maximum(sign * (X[:, j] - c), 0.0)
            # refit this column per cell against the current residuals
            hh = np.bincount(cell, weights=h * h, minlength=n_cells)
            hr = np.bincount(cell, weights=h * r, minlength=n_cells)
            beta = np.where(hh > 1e-12 * np.maximum(hh.max(), 1e-300), hr / np.where(hh > 0, hh, 1), 0.0)
            r = r - beta[cell] * h
            basis.append(bf)
            cols.append(h)
            stage.append(beta)
    coef = np.stack(stage, axis=1).reshape(pb.n_groups, 2, len(basis))
    return basis, np.column_stack(cols), coef


def backward_path(pb: _Problem, Bm: np.ndarray) -> list[list[int]]:
    """Column subsets from the full basis down to the constant, each step
    dropping the term whose removal costs the least heterogeneity quality."""
    grams = [_GroupGram.build(Bm[pb.group == g], pb.y[pb.group == g], pb.t[pb.group == g])
             for g in range(pb.n_groups)]
    active = list(range(1, Bm.shape[1]))
    path = [[0] + active]
    while active:
        best_q, best_j = -np.inf, None
        for j in active:
            q = heterogeneity_quality(grams, [0] + [a for a in active if a != j])
            if q > best_q:
                best_q, best_j = q, j
        active = [a for a in active if a != best_j]
        path.append([0] + active)
    return path


def _effects(Bm, coef, group, cols):
    c = coef[group]
    B = Bm[:, cols]
    return (B * c[:, 1]).sum(axis=1) - (B * c[:, 0]).sum(axis=1)


def oob_size_errors(pb_in: _Problem, pb_oob: _Problem, params: MarsParams) -> tuple[np.ndarray, np.ndarray]:
    """Per path size, squared distance on out-of-bag rows between the in-bag
    model's effects and those of the full forward basis refit on the
    out-of-bag rows themselves."""
    basis, Bm, _ = forward_pass(pb_in, params)
    path = backward_path(pb_in, Bm)
    Bo = basis_matrix(basis, pb_oob.X)
    full = list(range(Bm.shape[1]))
    ref_coef = _cell_coefficients(Bo, pb_oob.y, pb_oob.t, pb_oob.group, pb_oob.n_groups, full)
    target = _effects(Bo, ref_coef, pb_oob.group, full)
    sizes, errs = [], []
    for cols in path:
        coef = _cell_coefficients(Bm, pb_in.y, pb_in.t, pb_in.group, pb_in.n_groups, cols)
        est = _effects(Bo, coef, pb_oob.group, cols)
        sizes.append(len(cols))
        errs.append(float(((est - target) ** 2).sum()))
    return np.array(sizes), np.array(errs)


def _problem(d: Dataset, sa: StrataAssignment | None, params: MarsParams):
    """Build the fitting problem and the stratum -> group map."""
    X, y, t = d.X, d.y, d.t.astype(np.int64)
    if sa is None:
        gos = None
        group = np.zeros(d.n, dtype=np.int64)
    else:
        if len(sa.strata) != d.n:
            raise HTEError("strata and data disagree on n", code="dimension-mismatch")
        gos = merge_strata(sa.index, t, sa.S, params.group_arm)
        group = gos[sa.index]
    n_groups = int(group.max()) + 1 if gos is None else int(gos.max()) + 1
    return _Problem(np.ascontiguousarray(X), y, t, group, n_groups), gos


def _check_cells(pb: _Problem):
    cnt = np.bincount(pb.cell, minlength=2 * pb.n_groups).reshape(pb.n_groups, 2)
    if cnt.min() < 1:
        raise DegenerateArm("a group lacks treated or control units")


def fit_causal_mars(d: Dataset, D: int = 11, sa: StrataAssignment | None = None, rng=None,
                    params: MarsParams | None = None, propensity=None) -> MarsModel:
    """Causal MARS with backward deletion and out-of-bag size selection.

    ``sa`` switches on the propensity-adjusted variant. With
    ``params.prune`` false the forward-pass basis is kept whole.
    """
    validate_dataset(d)
    params = MarsParams(D=D) if params is None else params
    rng = as_rng(rng)
    pb, gos = _problem(d, sa, params)
    _check_cells(pb)
    basis, Bm, stage_coef = forward_pass(pb, params)
    boundaries = None if sa is None else sa.boundaries
    if not params.prune:
        # the forward pass's own stagewise coefficients
        return MarsModel(basis, stage_coef, gos, boundaries, propensity)
    sizes, errs = _select_size(d, sa, params, rng)
    keep = int(sizes[np.argmin(errs)])  # first minimum; the path runs large to small
    path = backward_path(pb, Bm)
    cols = next(c for c in path if len(c) == min(keep, len(path[0])))
    # deletion compares least-squares fits, so the kept terms are refit that way
    coef = _cell_coefficients(Bm, pb.y, pb.t, pb.group, pb.n_groups, cols)
    return MarsModel([basis[c] for c in cols], coef, gos, boundaries, propensity, sizes, errs)


def _select_size(d: Dataset, sa, params: MarsParams, rng, max_tries: int = 100):
    n = d.n
    for _ in range(max_tries):
        idx = rng.integers(0, n, size=n)
        oob = np.setdiff1d(np.arange(n), idx)
        try:
            pb_in, gos = _problem(d.subset(idx), None if sa is None else sa.subset(idx), params)
            _check_cells(pb_in)
        except HTEError:
            continue
        t_oob = d.t[oob].astype(np.int64)
        if sa is None:
            g_oob = np.zeros(len(oob), dtype=np.int64)
        else:
            g_oob = gos[sa.index[oob]]
        pb_oob = _Problem(np.ascontiguousarray(d.X[oob]), d.y[oob], t_oob, g_oob, pb_in.n_groups)
        if len(oob) == 0 or np.bincount(pb_oob.cell, minlength=2 * pb_oob.n_groups).min() < 1:
            continue
        return oob_size_errors(pb_in, pb_oob, params)
    raise DegenerateArm("no bootstrap sample left both arms in every group out of bag")


def fit_bagged_causal_mars(d: Dataset, D: int = 11, B: int = 50, sa: StrataAssignment | None = None,
                           rng=None, params: MarsParams | None = None, propensity=None,
                           max_tries: int = 100) -> BaggedMars:
    """Average of ``B`` unpruned causal MARS fits on bootstrap resamples.

    A resample that leaves some group without both arms is redrawn from the
    same member stream.
    """
    validate_dataset(d)
    if B < 1:
        raise HTEError("B must be >= 1", code="invalid-params")
    params = MarsParams(D=D, prune=False) if params is None else params
    if params.prune:
        params = replace(params, prune=False)
    models, indices = [], []
    for member_rng in as_rng(rng).spawn(B):
        for _ in range(max_tries):
            idx = np.sort(member_rng.integers(0, d.n, size=d.n))
            sub = d.subset(idx)
            if min(sub.n_treated, sub.n_control) < 1:
                continue
            try:
                m = fit_causal_mars(sub, params.D, None if sa is None else sa.subset(idx),
                                    member_rng, params, propensity)
            except DegenerateArm:
                continue
            break
        else:
            raise DegenerateArm("could not draw a resample with both arms")
        models.append(m)
        indices.append(idx)
    return BaggedMars(models, indices)
