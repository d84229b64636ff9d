"""Compiled split-search loops.

All kernels walk a column-wise argsort of the full feature matrix (computed
once per fit) and skip rows outside the current node, so no per-node sorting
is needed. Candidates are visited feature-ascending then threshold-ascending
and only a strictly better score replaces the incumbent, which gives the
deterministic tie-break (lowest feature, then smallest threshold).
"""

from __future__ import annotations

import numpy as np
from numba import njit


def column_order(X: np.ndarray) -> np.ndarray:
    """(p, n) array; row j is a stable argsort of column j."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T).astype(np.int64)


@njit(cache=True, inline="always")
def _midpoint(lo, hi):
    thr = 0.5 * (lo + hi)
    if thr <= lo:
        thr = hi
    return thr


@njit(cache=True, nogil=True)
def best_regression_split(X, order, w, y, feats, min_leaf):
    """Best variance-reduction split of the weighted node ``w > 0``.

    Returns ``(feature, threshold, gain)``; ``feature == -1`` if no split with
    positive gain leaves ``min_leaf`` weight on both sides.
    """
    n = y.shape[0]
    W = 0.0
    S = 0.0
    for i in range(n):
        if w[i] > 0:
            W += w[i]
            S += w[i] * y[i]
    mean = S / W
    Sc = 0.0
    for i in range(n):
        if w[i] > 0:
            Sc += w[i] * (y[i] - mean)
    base = Sc * Sc / W
    best_gain = 0.0
    best_f = -1
    best_thr = 0.0
    for fi in range(feats.shape[0]):
        j = feats[fi]
        col = order[j]
        wl = 0.0
        sl = 0.0
        prev_x = 0.0
        started = False
        for k in range(n):
            i = col[k]
            wi = w[i]
            if wi <= 0:
                continue
            xi = X[i, j]
            if started and xi > prev_x:
                wr = W - wl
                if wl >= min_leaf and wr >= min_leaf:
                    sr = Sc - sl
                    gain = sl * sl / wl + sr * sr / wr - base
                    if gain > best_gain:
                        best_gain = gain
                        best_f = j
                        best_thr = _midpoint(prev_x, xi)
            wl += wi
            sl += wi * (y[i] - mean)
            prev_x = xi
            started = True
    return best_f, best_thr, best_gain


@njit(cache=True)
def _stratified_estimate(cnt, sm, sq, n_strata, min_arm):
    """Stratum-weighted effect, its variance and the adjusted arm means.

    ``cnt``, ``sm``, ``sq`` are (S, 2) arrays of per-stratum, per-arm counts,
    sums and sums of squares (column 1 = treated). A stratum contributes iff
    both arms hold at least ``min_arm`` units.
    """
    num_tau = 0.0
    num_mu1 = 0.0
    num_mu0 = 0.0
    den = 0.0
    num_var = 0.0
    for s in range(n_strata):
        n1 = cnt[s, 1]
        n0 = cnt[s, 0]
        if n1 < min_arm or n0 < min_arm:
            continue
        m1 = sm[s, 1] / n1
        m0 = sm[s, 0] / n0
        ns = n1 + n0
        num_tau += ns * (m1 - m0)
        num_mu1 += ns * m1
        num_mu0 += ns * m0
        den += ns
        if n1 > 1.0 and n0 > 1.0:
            v1 = (sq[s, 1] - sm[s, 1] * m1) / (n1 - 1.0)
            v0 = (sq[s, 0] - sm[s, 0] * m0) / (n0 - 1.0)
            if v1 < 0.0:
                v1 = 0.0
            if v0 < 0.0:
                v0 = 0.0
            num_var += ns * ns * (v1 / n1 + v0 / n0)
    if den == 0.0:
        return False, 0.0, 0.0, 0.0, 0.0
    return True, num_tau / den, num_var / (den * den), num_mu1 / den, num_mu0 / den


@njit(cache=True)
def _viable(cnt, n_strata, min_per_arm):
    for s in range(n_strata):
        if cnt[s, 0] >= min_per_arm and cnt[s, 1] >= min_per_arm:
            return True
    return False


@njit(cache=True, nogil=True)
def best_causal_split(X, order, in_node, y, t, strata, n_strata, feats,
                      min_leaf_per_arm, min_arm):
    """Best T-statistic split of the node ``in_node``.

    Returns ``(feature, threshold, score)`` with ``feature == -1`` when no
    split leaves both children viable.
    """
    n = y.shape[0]
    tc = np.zeros((n_strata, 2))
    ts = np.zeros((n_strata, 2))
    tq = np.zeros((n_strata, 2))
    for i in range(n):
        if in_node[i]:
            s = strata[i]
            a = t[i]
            tc[s, a] += 1.0
            ts[s, a] += y[i]
            tq[s, a] += y[i] * y[i]
    lc = np.zeros((n_strata, 2))
    ls = np.zeros((n_strata, 2))
    lq = np.zeros((n_strata, 2))
    rc = np.zeros((n_strata, 2))
    rs = np.zeros((n_strata, 2))
    rq = np.zeros((n_strata, 2))
    best_score = -1.0
    best_f = -1
    best_thr = 0.0
    for fi in range(feats.shape[0]):
        j = feats[fi]
        col = order[j]
        lc[:, :] = 0.0
        ls[:, :] = 0.0
        lq[:, :] = 0.0
        prev_x = 0.0
        started = False
        for k in range(n):
            i = col[k]
            if not in_node[i]:
                continue
            xi = X[i, j]
            if started and xi > prev_x:
                if _viable(lc, n_strata, min_leaf_per_arm):
                    for s in range(n_strata):
                        for a in range(2):
                            rc[s, a] = tc[s, a] - lc[s, a]
                            rs[s, a] = ts[s, a] - ls[s, a]
                            rq[s, a] = tq[s, a] - lq[s, a]
                    if _viable(rc, n_strata, min_leaf_per_arm):
                        okl, taul, varl, _a, _b = _stratified_estimate(lc, ls, lq, n_strata, min_arm)
                        okr, taur, varr, _c, _d = _stratified_estimate(rc, rs, rq, n_strata, min_arm)
                        if okl and okr:
                            diff = abs(taul - taur)
                            den = varl + varr
                            if den > 0.0:
                                score = diff / np.sqrt(den)
                            elif diff > 0.0:
                                score = np.inf
                            else:
                                score = 0.0
                            if score > best_score:
                                best_score = score
                                best_f = j
                                best_thr = _midpoint(prev_x, xi)
            s = strata[i]
            a = t[i]
            lc[s, a] += 1.0
            ls[s, a] += y[i]
            lq[s, a] += y[i] * y[i]
            prev_x = xi
            started = True
    return best_f, best_thr, best_score


@njit(cache=True)
def _pair_gain(a1, q1, a0, q0, tol1, tol0):
    # arm-specific minus shared RSS reduction for a single basis column:
    # a1^2/q1 + a0^2/q0 - (a1+a0)^2/(q1+q0), written in its nonnegative form
    if q1 <= tol1 or q0 <= tol0:
        return 0.0
    d = a1 * q0 - a0 * q1
    return d * d / (q1 * q0 * (q1 + q0))


@njit(cache=True, inline="always")
def _hinge_sums(tot, pre, b, c, kc):
    # (x - kc)_+ lives on rows with x > kc: totals minus prefix, which can
    # cancel to tiny negatives, hence the abs in the tolerance
    s0 = tot[b, c, 0] - pre[b, c, 0]
    s1 = tot[b, c, 1] - pre[b, c, 1]
    s2 = tot[b, c, 2] - pre[b, c, 2]
    s3 = tot[b, c, 3] - pre[b, c, 3]
    s4 = tot[b, c, 4] - pre[b, c, 4]
    a_f = s0 - kc * s1
    q_f = s2 - 2.0 * kc * s3 + kc * kc * s4
    t_f = 1e-12 * (abs(s2) + kc * kc * abs(s4)) + 1e-300
    # (kc - x)_+ lives on rows with x <= kc: the prefix itself
    a_g = kc * pre[b, c, 1] - pre[b, c, 0]
    q_g = kc * kc * pre[b, c, 4] - 2.0 * kc * pre[b, c, 3] + pre[b, c, 2]
    t_g = 1e-12 * (pre[b, c, 2] + kc * kc * pre[b, c, 4]) + 1e-300
    return a_f, q_f, t_f, a_g, q_g, t_g


@njit(cache=True, inline="always")
def _accumulate(acc, basis, i, x, ri, c, allowed, j, m):
    for b in range(m):
        if not allowed[b, j]:
            continue
        u = basis[i, b]
        if u == 0.0:
            continue
        uu = u * u
        acc[b, c, 0] += u * x * ri
        acc[b, c, 1] += u * ri
        acc[b, c, 2] += uu * x * x
        acc[b, c, 3] += uu * x
        acc[b, c, 4] += uu
        acc[b, c, 5] += 1.0


@njit(cache=True, nogil=True)
def mars_candidate_gains(X, order, basis, allowed, knots, n_knots, r, cell,
                         n_groups, group_weight, min_span):
    """Weighted treatment-heterogeneity gain of every candidate hinge pair.

    ``basis`` is the (n, m) matrix of current basis columns, ``allowed[b, j]``
    says whether parent ``b`` may be multiplied by a hinge in feature ``j``,
    ``knots`` is (p, K) with ``n_knots[j]`` valid entries per feature, ``cell``
    is ``2 * group + arm``. A half of the pair that is nonzero somewhere must
    be nonzero on at least ``min_span`` units of every cell. Returns an
    (m, p, K) array, ``-inf`` where the candidate is not admissible.
    """
    n, m = basis.shape
    p = X.shape[1]
    K = knots.shape[1]
    n_cells = 2 * n_groups
    out = np.full((m, p, K), -np.inf)
    # per parent and cell: u*x*r, u*r, u^2*x^2, u^2*x, u^2, #(u != 0)
    tot = np.zeros((m, n_cells, 6))
    pre = np.zeros((m, n_cells, 6))
    for j in range(p):
        any_allowed = False
        for b in range(m):
            if allowed[b, j]:
                any_allowed = True
        if not any_allowed:
            continue
        tot[:, :, :] = 0.0
        for i in range(n):
            _accumulate(tot, basis, i, X[i, j], r[i], cell[i], allowed, j, m)
        pre[:, :, :] = 0.0
        col = order[j]
        ptr = 0
        for kk in range(n_knots[j]):
            kc = knots[j, kk]
            while ptr < n:
                i = col[ptr]
                x = X[i, j]
                if x > kc:
                    break
                _accumulate(pre, basis, i, x, r[i], cell[i], allowed, j, m)
                ptr += 1
            for b in range(m):
                if not allowed[b, j]:
                    continue
                # span check; rows at x == kc are zero in both halves, so the
                # lower half's support is approximated by the prefix count
                any_f = 0.0
                any_g = 0.0
                min_f = np.inf
                min_g = np.inf
                for c in range(n_cells):
                    nf = tot[b, c, 5] - pre[b, c, 5]
                    ng = pre[b, c, 5]
                    any_f += nf
                    any_g += ng
                    min_f = min(min_f, nf)
                    min_g = min(min_g, ng)
                if any_f == 0.0 and any_g == 0.0:
                    continue
                if (any_f > 0.0 and min_f < min_span) or (any_g > 0.0 and min_g < min_span):
                    continue
                total = 0.0
                for g in range(n_groups):
                    af1, qf1, tf1, ag1, qg1, tg1 = _hinge_sums(tot, pre, b, 2 * g + 1, kc)
                    af0, qf0, tf0, ag0, qg0, tg0 = _hinge_sums(tot, pre, b, 2 * g, kc)
                    dg = _pair_gain(af1, qf1, af0, qf0, tf1, tf0)
                    dg += _pair_gain(ag1, qg1, ag0, qg0, tg1, tg0)
                    total += group_weight[g] * dg
                out[b, j, kk] = total
    return out
