"""JSON documents for fitted models.

A document is ``{format_version, method, params, seed, model}``. Trees are
written as nested node objects carrying their original node id, so decoding
restores the exact array layout; floats go through ``repr`` and come back
bit-identical. Training-time bookkeeping (in-bag counts, bootstrap indices)
is not stored, so out-of-bag readouts are unavailable after loading.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import DbForest, NullModel, ToForest
from .boosting import BoostModel
from .causal_tree import CausalTree, CausalTreeParams
from .errors import HTEError, MalformedDocument, VersionMismatch
from .forests import ForestParams, PairTree, RegressionForest, Tree
from .mars import BaggedMars, BasisFunction, Hinge, MarsModel
from .pto import PtoModel

FORMAT_VERSION = 1


@dataclass
class SavedModel:
    model: object
    method: str | None = None
    params: dict = field(default_factory=dict)
    seed: int | None = None


# --------------------------------------------------------------------------
# trees


def _tree_out(tree: Tree, extra: dict[str, np.ndarray] | None = None) -> dict:
    extra = extra or {}

    def node(i: int) -> dict:
        out = {"id": i, "value": tree.value[i].tolist()}
        for k, arr in extra.items():
            out[k] = arr[i].item()
        if tree.feature[i] >= 0:
            out["feature"] = int(tree.feature[i])
            out["threshold"] = float(tree.threshold[i])
            out["left"] = node(int(tree.left[i]))
            out["right"] = node(int(tree.right[i]))
        return out

    return node(0)


def _tree_in(doc: dict, extra: tuple[str, ...] = ()) -> tuple[Tree, dict[str, np.ndarray]]:
    nodes = []

    def walk(nd, parent, depth):
        nodes.append((nd, parent, depth))
        if "feature" in nd:
            walk(nd["left"], nd["id"], depth + 1)
            walk(nd["right"], nd["id"], depth + 1)

    walk(doc, -1, 0)
    m = len(nodes)
    ids = sorted(nd["id"] for nd, _, _ in nodes)
    if ids != list(range(m)):
        raise MalformedDocument("tree node ids are not 0..n-1")
    feature = np.full(m, -1, dtype=np.int64)
    threshold = np.zeros(m)
    left = np.full(m, -1, dtype=np.int64)
    right = np.full(m, -1, dtype=np.int64)
    parent = np.empty(m, dtype=np.int64)
    depth = np.empty(m, dtype=np.int64)
    value = [None] * m
    cols = {k: [None] * m for k in extra}
    for nd, par, dep in nodes:
        i = nd["id"]
        parent[i], depth[i] = par, dep
        value[i] = np.asarray(nd["value"], dtype=float)
        for k in extra:
            cols[k][i] = nd[k]
        if "feature" in nd:
            feature[i] = nd["feature"]
            threshold[i] = nd["threshold"]
            left[i], right[i] = nd["left"]["id"], nd["right"]["id"]
    tree = Tree(feature, threshold, left, right, parent, depth, np.vstack(value))
    return tree, {k: np.asarray(v) for k, v in cols.items()}


def _forest_out(f: RegressionForest | None) -> dict | None:
    if f is None:
        return None
    return {"params": asdict(f.params), "clip": f.clip, "trees": [_tree_out(t) for t in f.trees]}


def _forest_in(doc: dict | None) -> RegressionForest | None:
    if doc is None:
        return None
    trees = [_tree_in(t)[0] for t in doc["trees"]]
    return RegressionForest(trees, ForestParams(**doc["params"]), None, doc["clip"])


def _pair_out(pt: PairTree) -> dict:
    extra = {"mu1": pt.mu1, "mu0": pt.mu0, "n1": pt.n1, "n0": pt.n0}
    if pt.source is not None:
        extra["source"] = pt.source
    return _tree_out(pt.tree, extra)


def _pair_in(doc: dict) -> PairTree:
    keys = ("mu1", "mu0", "n1", "n0") + (("source",) if "source" in doc else ())
    tree, c = _tree_in(doc, keys)
    return PairTree(tree, c["mu1"].astype(float), c["mu0"].astype(float),
                    c["n1"].astype(np.int64), c["n0"].astype(np.int64), c.get("source"))


def _ctree_out(ct: CausalTree) -> dict:
    return {"params": asdict(ct.params), "n_strata": ct.n_strata, "tree": _tree_out(ct.tree)}


def _ctree_in(doc: dict) -> CausalTree:
    return CausalTree(_tree_in(doc["tree"])[0], CausalTreeParams(**doc["params"]), doc["n_strata"])


# --------------------------------------------------------------------------
# MARS


def _basis_out(b: BasisFunction) -> list:
    return [[h.feature, h.knot, h.sign] for h in b.terms]


def _basis_in(doc: list) -> BasisFunction:
    return BasisFunction(tuple(Hinge(int(f), float(k), int(s)) for f, k, s in doc))


def _opt_array(a):
    return None if a is None else np.asarray(a).tolist()


def _mars_out(m: MarsModel, with_propensity: bool = True) -> dict:
    return {
        "basis": [_basis_out(b) for b in m.basis],
        "coef": m.coef.tolist(),
        "coef_shape": list(m.coef.shape),
        "group_of_stratum": _opt_array(m.group_of_stratum),
        "boundaries": _opt_array(m.boundaries),
        "propensity": _forest_out(m.propensity) if with_propensity else None,
    }


def _mars_in(doc: dict, propensity: RegressionForest | None = None) -> MarsModel:
    coef = np.asarray(doc["coef"], dtype=float).reshape(doc["coef_shape"])
    gos = doc["group_of_stratum"]
    bnd = doc["boundaries"]
    return MarsModel(
        [_basis_in(b) for b in doc["basis"]], coef,
        None if gos is None else np.asarray(gos, dtype=np.int64),
        None if bnd is None else np.asarray(bnd, dtype=float),
        propensity if doc["propensity"] is None else _forest_in(doc["propensity"]),
    )


# --------------------------------------------------------------------------
# dispatch


def model_payload(model) -> dict:
    """Self-describing payload for any fitted model in the package."""
    if isinstance(model, NullModel):
        return {"kind": "null", "mu1": model.mu1, "mu0": model.mu0}
    if isinstance(model, ToForest):
        return {"kind": "to_forest", "forest": _forest_out(model.forest)}
    if isinstance(model, DbForest):
        return {"kind": "db_forest", "forest1": _forest_out(model.forest1),
                "forest0": _forest_out(model.forest0)}
    if isinstance(model, PtoModel):
        return {"kind": "pto", "pairs": [_pair_out(p) for p in model.pair_forest],
                "raw_forest": _forest_out(model.raw_forest),
                "smoother": _forest_out(model.smoother)}
    if isinstance(model, CausalTree):
        return {"kind": "causal_tree", **_ctree_out(model)}
    if isinstance(model, BoostModel):
        return {"kind": "causal_boost", "epsilon": model.epsilon, "n_strata": model.n_strata,
                "trees": [_ctree_out(t) for t in model.trees],
                "propensity": _forest_out(model.propensity)}
    if isinstance(model, MarsModel):
        return {"kind": "causal_mars", **_mars_out(model)}
    if isinstance(model, BaggedMars):
        props = {id(m.propensity) for m in model.models}
        if len(props) == 1:
            # members share one propensity forest: store it once
            return {"kind": "bagged_causal_mars", "propensity": _forest_out(model.models[0].propensity),
                    "models": [_mars_out(m, False) for m in model.models]}
        return {"kind": "bagged_causal_mars", "propensity": None,
                "models": [_mars_out(m) for m in model.models]}
    if isinstance(model, RegressionForest):
        return {"kind": "forest", **_forest_out(model)}
    raise TypeError(f"cannot serialize {type(model).__name__}")


def model_from_payload(doc: dict):
    kind = doc["kind"]
    if kind == "null":
        return NullModel(float(doc["mu1"]), float(doc["mu0"]))
    if kind == "to_forest":
        return ToForest(_forest_in(doc["forest"]))
    if kind == "db_forest":
        return DbForest(_forest_in(doc["forest1"]), _forest_in(doc["forest0"]))
    if kind == "pto":
        return PtoModel([_pair_in(p) for p in doc["pairs"]], _forest_in(doc["raw_forest"]),
                        _forest_in(doc["smoother"]))
    if kind == "causal_tree":
        return _ctree_in(doc)
    if kind == "causal_boost":
        return BoostModel([_ctree_in(t) for t in doc["trees"]], float(doc["epsilon"]),
                          doc["n_strata"], _forest_in(doc["propensity"]))
    if kind == "causal_mars":
        return _mars_in(doc)
    if kind == "bagged_causal_mars":
        shared = _forest_in(doc.get("propensity"))
        return BaggedMars([_mars_in(m, shared) for m in doc["models"]])
    if kind == "forest":
        return _forest_in(doc)
    raise MalformedDocument(f"unknown model kind {kind!r}")


def to_document(model, method: str | None = None, params: dict | None = None,
                seed: int | None = None) -> dict:
    return {"format_version": FORMAT_VERSION, "method": method, "params": params or {},
            "seed": seed, "model": model_payload(model)}


def from_document(doc) -> SavedModel:
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise MalformedDocument("not a model document")
    if doc["format_version"] != FORMAT_VERSION:
        raise VersionMismatch(
            f"document has format_version {doc['format_version']!r}, expected {FORMAT_VERSION}")
    try:
        model = model_from_payload(doc["model"])
        return SavedModel(model, doc.get("method"), doc.get("params") or {}, doc.get("seed"))
    except (KeyError, TypeError, ValueError, IndexError) as e:
        if isinstance(e, (MalformedDocument, VersionMismatch)):
            raise
        raise MalformedDocument(f"bad model payload: {e!r}") from None


def save_model(path, model, method: str | None = None, params: dict | None = None,
               seed: int | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_document(model, method, params, seed), fh)


def load_model(path) -> SavedModel:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise HTEError(f"{path}: no such file", code="file-not-found") from None
    except json.JSONDecodeError as e:
        raise MalformedDocument(f"{path}: not valid JSON ({e.msg} at char {e.pos})") from None
    except UnicodeDecodeError:
        raise MalformedDocument(f"{path}: not UTF-8 text") from None
    return from_document(doc)
