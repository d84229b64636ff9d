from __future__ import annotations

import numpy as np
import pytest

from hte_lab.baselines import fit_db_forest, fit_null, fit_to_forest
from hte_lab.boosting import cross_validate_boost
from hte_lab.causal_tree import CausalTreeParams
from hte_lab.data import Dataset
from hte_lab.errors import DegenerateArm, HTEError
from hte_lab.forests import ForestParams
from hte_lab.propensity import ate_cm
from hte_lab.pto import fit_pto_forest
from hte_lab.simbench import BenchConfig, generate, mse_effect, scenario

from conftest import make_data

HALF = 0.5


def test_null_values():
    d = Dataset(np.zeros((4, 1)), [1, 1, 0, 0], [3.0, 5.0, 1.0, 1.0])
    np.testing.assert_array_equal(fit_null(d).predict_effect(np.zeros((3, 1))), 3.0)
    same = Dataset(np.zeros((4, 1)), [1, 1, 0, 0], [1.0, 2.0, 1.0, 2.0])
    assert fit_null(same).effect == 0.0


def test_null_equals_cm():
    d = make_data(n=50, seed=1)
    assert fit_null(d).effect == ate_cm(d).estimate


def test_null_degenerate():
    with pytest.raises(DegenerateArm):
        fit_null(Dataset(np.zeros((3, 1)), [1, 1, 1], [1.0, 2.0, 3.0]))


def test_to_forest_constant_z():
    rng = np.random.default_rng(0)
    t = np.array([1, 0] * 30)
    d = Dataset(rng.normal(size=(60, 2)), t, np.where(t == 1, 1.0, -1.0))  # Z = 2 everywhere
    m = fit_to_forest(d, np.full(60, HALF), ForestParams(n_trees=10))
    np.testing.assert_allclose(m.predict_effect(d.X), 2.0)
    with pytest.raises(HTEError):
        m.predict_means(d.X)


def test_to_forest_is_pto_step_one():
    d = make_data(n=100, seed=2, tau=lambda X: X[:, 0])
    s = np.full(d.n, HALF)
    p = ForestParams(n_trees=15)
    np.testing.assert_array_equal(fit_to_forest(d, s, p, 5).predict_effect(d.X),
                                  fit_pto_forest(d, s, p, rng=5).predict_raw(d.X))


def test_db_forest_identical_arms_near_zero():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(400, 3))
    t = np.array([1, 0] * 200)
    y = X[:, 0] + rng.normal(size=400)
    m = fit_db_forest(Dataset(X, t, y), ForestParams(n_trees=50), 0)
    eff = m.predict_effect(X)
    assert np.all(np.abs(eff) < 3 * np.std(y))


def test_db_single_leaf_is_null():
    d = make_data(n=40, seed=4)
    m = fit_db_forest(d, ForestParams(n_trees=1, max_depth=0, bootstrap=False))
    np.testing.assert_allclose(m.predict_effect(d.X), fit_null(d).effect, rtol=1e-14)


def test_db_arm_too_small():
    d = make_data(n=30, seed=5, pi=0.15)
    with pytest.raises(HTEError) as e:
        fit_db_forest(d, ForestParams(min_leaf=5))
    assert e.value.code == "arm-too-small"


def test_db_effect_is_difference_of_means():
    d = make_data(n=80, seed=6)
    m = fit_db_forest(d, ForestParams(n_trees=5), 0)
    mu1, mu0 = m.predict_means(d.X)
    np.testing.assert_array_equal(m.predict_effect(d.X), mu1 - mu0)


def test_scenario5_to_worse_than_pto():
    cfg = BenchConfig()
    draw = generate(scenario(5), 1)
    d = draw.dataset
    s = np.full(d.n, HALF)
    to = mse_effect(fit_to_forest(d, s, cfg.forest, 0).predict_effect(d.X), draw.tau_true)
    pto = mse_effect(fit_pto_forest(d, s, cfg.forest, rng=0).predict_effect(d.X), draw.tau_true)
    assert pto < to


@pytest.mark.xfail(strict=True, reason=(
    "tau in scenario 3 has mean -4; boosting starts from a zero effect and spends "
    "its early shrunken steps on the offset, so the DB forest wins at desk scale"))
def test_scenario3_db_worse_than_causal_boosting():
    cfg = BenchConfig()
    db_err, cb_err = [], []
    for seed in (1, 2, 3):
        draw = generate(scenario(3), seed)
        d = draw.dataset
        db_err.append(mse_effect(fit_db_forest(d, cfg.forest, 0).predict_effect(d.X), draw.tau_true))
        cb = cross_validate_boost(d, None, cfg.folds, cfg.boost_K, cfg.boost_epsilon,
                                  CausalTreeParams(max_depth=cfg.boost_depth), 0)
        cb_err.append(mse_effect(cb.model.predict_effect(d.X), draw.tau_true))
    assert np.median(cb_err) < np.median(db_err)
