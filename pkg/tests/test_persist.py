from __future__ import annotations

import json

import numpy as np
import pytest

from hte_lab.baselines import fit_db_forest, fit_null, fit_to_forest
from hte_lab.boosting import fit_causal_boost
from hte_lab.causal_tree import CausalTreeParams, fit_causal_tree
from hte_lab.errors import MalformedDocument, VersionMismatch
from hte_lab.forests import ForestParams, fit_regression_forest
from hte_lab.mars import MarsParams, fit_bagged_causal_mars, fit_causal_mars
from hte_lab.persist import FORMAT_VERSION, load_model, save_model
from hte_lab.propensity import assign_strata, fit_propensity
from hte_lab.pto import fit_pto_forest

from conftest import make_data

SMALL = ForestParams(n_trees=5, max_depth=3, min_leaf=3)


@pytest.fixture(scope="module")
def data():
    return make_data(n=120, p=4, seed=1, tau=lambda X: X[:, 0], mu=lambda X: X[:, 1])


@pytest.fixture(scope="module")
def newx():
    return np.random.default_rng(42).normal(size=(100, 4))


def _strat(d):
    forest, scores = fit_propensity(d, SMALL, 0)
    return forest, assign_strata(scores, 3)


def _models(d):
    forest, sa = _strat(d)
    half = np.full(d.n, 0.5)
    boost = fit_causal_boost(d, sa, 5, 0.3, CausalTreeParams(max_depth=2), 0)
    boost.propensity = forest
    return {
        "null": fit_null(d),
        "to_forest": fit_to_forest(d, half, SMALL, 0),
        "db_forest": fit_db_forest(d, SMALL, 0),
        "pto": fit_pto_forest(d, half, SMALL, rng=0),
        "pto_smoothed": fit_pto_forest(d, half, SMALL, smooth=True, rng=0),
        "causal_tree": fit_causal_tree(d, None, CausalTreeParams(max_depth=3)),
        "causal_boost": fit_causal_boost(d, None, 5, 0.3, CausalTreeParams(max_depth=2), 0),
        "causal_boost_adj": boost,
        "causal_mars": fit_causal_mars(d, 3, rng=0),
        "causal_mars_adj": fit_causal_mars(d, 2, sa, 0, MarsParams(D=2), forest),
        "bagged_causal_mars": fit_bagged_causal_mars(d, 2, 3, rng=0),
        "bagged_causal_mars_adj": fit_bagged_causal_mars(d, 2, 2, sa, 0, propensity=forest),
        "forest": forest,
    }


def test_round_trip_predictions_are_identical(data, newx, tmp_path):
    for name, model in _models(data).items():
        path = tmp_path / f"{name}.json"
        save_model(path, model, name, {"note": name}, 7)
        saved = load_model(path)
        assert saved.method == name and saved.seed == 7 and saved.params == {"note": name}
        if name == "forest":
            np.testing.assert_array_equal(saved.model.predict(newx), model.predict(newx))
            continue
        np.testing.assert_array_equal(saved.model.predict_effect(newx),
                                      model.predict_effect(newx), err_msg=name)


def test_bagged_propensity_stored_once(data, tmp_path):
    forest, sa = _strat(data)
    bag = fit_bagged_causal_mars(data, 2, 3, sa, 0, propensity=forest)
    path = tmp_path / "bag.json"
    save_model(path, bag)
    doc = json.loads(path.read_text())
    assert doc["model"]["propensity"] is not None
    assert all(m["propensity"] is None for m in doc["model"]["models"])
    back = load_model(path).model
    assert back.models[0].propensity is back.models[1].propensity


def test_truncated_file(data, tmp_path):
    path = tmp_path / "m.json"
    save_model(path, fit_causal_boost(data, None, 3, 0.5, CausalTreeParams(max_depth=2), 0))
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(MalformedDocument):
        load_model(path)


def test_foreign_version(data, tmp_path):
    path = tmp_path / "m.json"
    save_model(path, fit_null(data))
    doc = json.loads(path.read_text())
    doc["format_version"] = FORMAT_VERSION + 1
    path.write_text(json.dumps(doc))
    with pytest.raises(VersionMismatch):
        load_model(path)


@pytest.mark.parametrize("doc", [[], {"no": "version"},
                                 {"format_version": FORMAT_VERSION, "model": {"kind": "nope"}},
                                 {"format_version": FORMAT_VERSION, "model": {"kind": "null"}}])
def test_malformed_documents(doc, tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(MalformedDocument):
        load_model(path)


def test_tree_node_ids_are_checked(data, tmp_path):
    path = tmp_path / "m.json"
    save_model(path, fit_causal_tree(data, None, CausalTreeParams(max_depth=2)))
    doc = json.loads(path.read_text())
    doc["model"]["tree"]["id"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(MalformedDocument):
        load_model(path)


def test_plain_forest_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 2))
    f = fit_regression_forest(X, X[:, 0] + rng.normal(size=50), SMALL, 0)
    save_model(tmp_path / "f.json", f)
    np.testing.assert_array_equal(load_model(tmp_path / "f.json").model.predict(X), f.predict(X))
