"""Desk-scale simulation benchmark.

    python3 scripts/run_benchmark.py --figure 3      # randomized scenarios 1-8
    python3 scripts/run_benchmark.py --figure 4      # biased scenarios 9-16

Writes ``results/fig{3,4}_results.csv`` and a JSON summary, then prints the
median-MSE table and the comparisons each setting is expected to show.
"""

from __future__ import annotations

import argparse
import json
import time
from dataclasses import asdict
from pathlib import Path

from hte_lab.simbench import (
    BenchConfig, median_mse, run_benchmark, write_results_csv, write_summary_json,
)

ROSTERS = {
    3: (list(range(1, 9)), ["null", "to_forest", "db_forest", "pto", "causal_boost",
                            "bagged_causal_mars"]),
    4: (list(range(9, 17)), ["null", "causal_boost", "causal_boost_adj"]),
}


def table(results, scenarios, methods) -> str:
    head = "scenario " + " ".join(f"{m[:12]:>12}" for m in methods)
    lines = [head]
    for s in scenarios:
        lines.append(f"{s:>8} " + " ".join(f"{median_mse(results, s, m):>12.3f}" for m in methods))
    return "\n".join(lines)


def randomized_checks(results) -> list[tuple[str, bool]]:
    out = []
    for s in range(2, 9):
        null = median_mse(results, s, "null")
        for m in ("pto", "causal_boost", "bagged_causal_mars"):
            out.append((f"scenario {s}: {m} < null", median_mse(results, s, m) < null))
    return out


def biased_checks(results) -> list[tuple[str, bool]]:
    return [(f"scenario {s}: CB1 <= CB0",
             median_mse(results, s, "causal_boost_adj") <= median_mse(results, s, "causal_boost"))
            for s in range(9, 17)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--figure", type=int, choices=(3, 4), default=3)
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--methods", help="comma-separated override of the roster")
    ap.add_argument("--out-dir", default="results")
    a = ap.parse_args()

    scenarios, methods = ROSTERS[a.figure]
    if a.methods:
        methods = a.methods.split(",")
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.time()
    cfg = BenchConfig()
    res = run_benchmark(scenarios, methods, a.reps, a.seed, cfg, a.threads,
                        progress=lambda r: print(f"  scenario {r[0].scenario} rep {r[0].rep}", flush=True))
    minutes = (time.time() - start) / 60
    write_results_csv(res, out / f"fig{a.figure}_results.csv")
    write_summary_json(res, out / f"fig{a.figure}_summary.json")
    meta = {"scenarios": scenarios, "methods": methods, "reps": a.reps, "seed": a.seed,
            "config": asdict(cfg), "minutes": minutes}
    (out / f"fig{a.figure}_meta.json").write_text(json.dumps(meta, indent=2))
    print(table(res, scenarios, methods))
    print(f"wall time {minutes:.1f} min")
    checks = randomized_checks(res) if a.figure == 3 else biased_checks(res)
    for label, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {label}")
    if a.figure == 4:
        print(f"CB1 <= CB0 in {sum(ok for _, ok in checks)} of 8 scenarios")


if __name__ == "__main__":
    main()
