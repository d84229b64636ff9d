"""Command-line entry point: ``hte-lab <command> ...``.

Every command exits 0 on success. Failures print one line
``error: <code>: <message>`` on stderr and exit 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields

import numpy as np

from .baselines import fit_db_forest, fit_null, fit_to_forest
from .boosting import cross_validate_boost, fit_causal_boost
from .causal_tree import CausalTreeParams
from .errors import ConfigError, HTEError
from .forests import ForestParams, Tree
from .mars import MarsParams, fit_bagged_causal_mars, fit_causal_mars
from .persist import load_model, save_model
from .propensity import DEFAULT_STRATA, assign_strata, fit_propensity
from .pto import fit_pto_forest
from .simbench import (
    BenchConfig, binned_effect_report, generate, method_tag, parse_ids, run_benchmark,
    scenario, summarize_with_tree, write_results_csv, write_summary_json,
)
from .tabular import dataset_columns, load_columns, load_csv, load_features, write_table

log = logging.getLogger("hte_lab")

FIT_METHODS = ("null", "to_forest", "db_forest", "pto", "causal_boost", "causal_mars",
               "bagged_causal_mars")
ADJUSTABLE = ("causal_boost", "causal_mars", "bagged_causal_mars")


@dataclass(frozen=True)
class RunConfig:
    """Everything ``fit`` and ``cv`` need besides the data."""

    method: str = "causal_boost"
    adjustment: str = "none"  # none | stratified
    propensity: str = "half"  # scores for to_forest / pto: half | estimated
    S: int = DEFAULT_STRATA
    seed: int = 0
    # forests (to_forest, db_forest, pto)
    n_trees: int = 200
    max_depth: int = 4
    min_leaf: int = 5
    mtry: int | None = None
    smooth: bool = False
    # propensity forest
    prop_trees: int = 500
    prop_depth: int = 6
    prop_min_leaf: int = 10
    # causal boosting
    K: int = 200
    epsilon: float = 0.05
    tree_depth: int = 3
    min_leaf_per_arm: int = 2
    folds: int = 5
    select_k: bool = True
    # causal MARS
    D: int = 11
    B: int = 50
    prune: bool = True

    def __post_init__(self):
        if self.method not in FIT_METHODS:
            raise ConfigError(f"method must be one of {', '.join(FIT_METHODS)}; got {self.method!r}")
        if self.adjustment not in ("none", "stratified"):
            raise ConfigError("adjustment must be 'none' or 'stratified'")
        if self.adjustment == "stratified":
            if self.method not in ADJUSTABLE:
                raise ConfigError(f"{self.method} has no stratified variant")
            if self.S < 1:
                raise ConfigError("stratified adjustment needs S >= 1")
        if self.propensity not in ("half", "estimated"):
            raise ConfigError("propensity must be 'half' or 'estimated'")

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "method" in raw:
            tag = method_tag(raw["method"])
            if tag.endswith("_adj"):
                # CB1 / CM1 name the stratified variant directly
                if raw.get("adjustment", "stratified") != "stratified":
                    raise ConfigError(f"{raw['method']} implies adjustment 'stratified'")
                raw = {**raw, "adjustment": "stratified"}
                tag = tag[: -len("_adj")]
            raw = {**raw, "method": tag}
        try:
            return cls(**raw)
        except HTEError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise HTEError(f"{path}: no such file", code="file-not-found") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e.msg})") from None
        return cls.from_dict(raw)

    def forest_params(self) -> ForestParams:
        return ForestParams(self.n_trees, self.max_depth, self.min_leaf, self.mtry)

    def propensity_params(self) -> ForestParams:
        return ForestParams(self.prop_trees, self.prop_depth, self.prop_min_leaf)

    def tree_params(self) -> CausalTreeParams:
        return CausalTreeParams(self.tree_depth, self.min_leaf_per_arm)


def _streams(seed: int):
    """(propensity, method) generators, both derived from the one seed."""
    prop, method = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(prop), np.random.default_rng(method)


def fit_from_config(d, cfg: RunConfig):
    """Fit ``cfg.method`` on ``d``; returns the model."""
    prop_rng, rng = _streams(cfg.seed)
    need_scores = cfg.adjustment == "stratified" or (
        cfg.method in ("to_forest", "pto") and cfg.propensity == "estimated")
    forest = scores = None
    if need_scores:
        forest, scores = fit_propensity(d, cfg.propensity_params(), prop_rng)
    sa = assign_strata(scores, cfg.S) if cfg.adjustment == "stratified" else None
    half = np.full(d.n, 0.5)
    m = cfg.method
    if m == "null":
        return fit_null(d)
    if m == "to_forest":
        return fit_to_forest(d, half if scores is None else scores, cfg.forest_params(), rng)
    if m == "db_forest":
        return fit_db_forest(d, cfg.forest_params(), rng)
    if m == "pto":
        return fit_pto_forest(d, half if scores is None else scores, cfg.forest_params(),
                              smooth=cfg.smooth, rng=rng)
    if m == "causal_boost":
        if cfg.select_k:
            rep = cross_validate_boost(d, sa, cfg.folds, cfg.K, cfg.epsilon, cfg.tree_params(), rng)
            model = rep.model
        else:
            model = fit_causal_boost(d, sa, cfg.K, cfg.epsilon, cfg.tree_params(), rng)
        model.propensity = forest
        return model
    if m == "causal_mars":
        return fit_causal_mars(d, cfg.D, sa, rng, MarsParams(D=cfg.D, prune=cfg.prune), forest)
    return fit_bagged_causal_mars(d, cfg.D, cfg.B, sa, rng, propensity=forest)


# --------------------------------------------------------------------------
# commands


def cmd_simulate(a) -> None:
    draw = generate(scenario(a.scenario), a.seed)
    write_table(a.out, dataset_columns(draw.dataset))
    if a.truth:
        write_table(a.truth, {"tau": draw.tau_true, "pi": draw.pi_true, "mu": draw.mu_true})
    if draw.redraws:
        log.info("treatment redrawn %d times to populate both arms", draw.redraws)


def _config(a) -> RunConfig:
    cfg = RunConfig.load(a.config) if a.config else RunConfig()
    if a.seed is not None:
        cfg = RunConfig.from_dict({**asdict(cfg), "seed": a.seed})
    return cfg


def cmd_fit(a) -> None:
    cfg = _config(a)
    d, rep = load_csv(a.data, a.treatment_col, a.response_col)
    model = fit_from_config(d, cfg)
    params = asdict(cfg)
    params["feature_names"] = list(rep.feature_names)
    save_model(a.out, model, cfg.method, params, cfg.seed)
    print(f"fit {cfg.method} on n={d.n}, p={d.p}; saved {a.out}")


def cmd_cv(a) -> None:
    cfg = _config(a)
    if cfg.method != "causal_boost":
        raise ConfigError("cv selects the number of trees for causal_boost only")
    d, _ = load_csv(a.data, a.treatment_col, a.response_col)
    prop_rng, rng = _streams(cfg.seed)
    sa = None
    if cfg.adjustment == "stratified":
        sa = assign_strata(fit_propensity(d, cfg.propensity_params(), prop_rng)[1], cfg.S)
    rep = cross_validate_boost(d, sa, a.folds, cfg.K, cfg.epsilon, cfg.tree_params(), rng,
                               refit=False)
    if a.out:
        write_table(a.out, {"k": np.arange(1, len(rep.per_k_error) + 1), "error": rep.per_k_error})
    print(f"k_star {rep.k_star}")
    print(f"error  {float(rep.per_k_error[rep.k_star - 1])!r}")


def cmd_predict(a) -> None:
    saved = load_model(a.model)
    names = saved.params.get("feature_names")
    X, _ = load_features(a.data, names)
    model = saved.model
    cols = {}
    try:
        mu1, mu0 = model.predict_means(X)
        cols = {"tau_hat": mu1 - mu0, "mu1_hat": mu1, "mu0_hat": mu0}
    except HTEError as e:
        if e.code != "means-unavailable":
            raise
        cols = {"tau_hat": model.predict_effect(X)}
    write_table(a.out, cols)


def cmd_benchmark(a) -> None:
    cfg = BenchConfig.paper_scale() if a.scale == "paper" else BenchConfig()
    methods = [m for m in a.methods.split(",") if m]

    def progress(rows):
        r = rows[0]
        log.info("scenario %d rep %d done", r.scenario, r.rep)

    res = run_benchmark(parse_ids(a.scenarios), methods, a.reps, a.seed, cfg, a.threads, progress)
    write_results_csv(res, a.out)
    if a.summary:
        write_summary_json(res, a.summary)
    failed = sum(r.error is not None for r in res)
    print(f"{len(res)} results ({failed} failed) -> {a.out}")


def _render_tree(tree: Tree, names: list[str]) -> list[str]:
    lines = []

    def walk(i, indent):
        pad = "  " * indent
        n = int(tree.value[i][1]) if tree.value.shape[1] > 1 else None
        tail = f" (n={n})" if n is not None else ""
        if tree.feature[i] < 0:
            lines.append(f"{pad}tau_hat = {tree.value[i][0]:.4g}{tail}")
            return
        f, c = names[tree.feature[i]], tree.threshold[i]
        lines.append(f"{pad}{f} < {c:.4g}{tail}")
        walk(int(tree.left[i]), indent + 1)
        lines.append(f"{pad}{f} >= {c:.4g}")
        walk(int(tree.right[i]), indent + 1)

    walk(0, 0)
    return lines


def cmd_report(a) -> None:
    est = load_columns(a.estimates)
    if "tau_hat" not in est:
        raise HTEError(f"{a.estimates}: no tau_hat column", code="missing-column")
    tau = est["tau_hat"]
    if a.summarize_tree:
        if not a.data:
            raise ConfigError("--summarize-tree needs --data")
        d, rep = load_csv(a.data, a.treatment_col, a.response_col)
        if d.n != len(tau):
            raise HTEError("estimates and data differ in length", code="length-mismatch")
        tree = summarize_with_tree(d.X, tau, a.depth, a.min_leaf)
        print("\n".join(_render_tree(tree, list(rep.feature_names))))
        return
    if not a.feature:
        raise ConfigError("report needs --feature NAME or --summarize-tree")
    if a.feature in est:
        feat = est[a.feature]
    elif a.data:
        feat = load_features(a.data, [a.feature])[0][:, 0]
    else:
        raise HTEError(f"no column {a.feature!r} in {a.estimates}; pass --data", code="missing-column")
    rows = binned_effect_report(tau, feat, a.bins)
    print(f"{'bin':>4} {'lo':>10} {'hi':>10} {'mean':>10} {'se':>10} {'count':>6}")
    for r in rows:
        print(f"{r.bin:>4} {r.lo:>10.4g} {r.hi:>10.4g} {r.mean:>10.4g} {r.se:>10.4g} {r.count:>6}")
    if a.out:
        write_table(a.out, {k: np.array([getattr(r, k) for r in rows])
                            for k in ("bin", "lo", "hi", "mean", "se", "count")})


# --------------------------------------------------------------------------
# parser


def _data_args(p):
    p.add_argument("--data", required=True)
    p.add_argument("--treatment-col", default="T")
    p.add_argument("--response-col", default="Y")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hte-lab", description="Heterogeneous treatment effect estimation.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write one simulated draw of a built-in scenario")
    p.add_argument("--scenario", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--truth")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a model from a JSON config")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    _data_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cv", help="cross-validated choice of the number of boosting trees")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    _data_args(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--out", help="CSV of per-k validation error")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("predict", help="per-unit effects from a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("benchmark", help="simulation benchmark over scenarios and methods")
    p.add_argument("--scenarios", default="1-16")
    p.add_argument("--methods", default="null,to_forest,db_forest,pto,causal_boost,bagged_causal_mars")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--summary", help="JSON summary of median and IQR per cell")
    p.add_argument("--threads", type=int)
    p.add_argument("--scale", choices=("desk", "paper"), default="desk")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("report", help="binned effect table or a summary tree")
    p.add_argument("--estimates", required=True)
    p.add_argument("--data")
    p.add_argument("--treatment-col", default="T")
    p.add_argument("--response-col", default="Y")
    p.add_argument("--feature")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--out")
    p.add_argument("--summarize-tree", action="store_true")
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--min-leaf", type=int, default=20)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except HTEError as e:
        print(f"error: {e.code}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: io-error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
