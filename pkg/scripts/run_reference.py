"""Base assignment plus joint and signals-only optimization on the bundled instance.

    python3 scripts/run_reference.py --seeds 0 1 2 --out results/reference
"""

import argparse
import json
from pathlib import Path

from netdesign.annealing import SAParams, dump_trace, run_sa
from netdesign.assignment import solve_ue
from netdesign.cli import bundled, dump_solution
from netdesign.costs import CostParams
from netdesign.network import Solution, load_links, load_od


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--out", default="results/reference")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    network = load_links(bundled("links.csv"), budget=900)
    od = load_od(bundled("od.csv"), network)
    params = CostParams()

    base = solve_ue(network, od, Solution.initial(network), params)
    print(f"base: TT={base.total_travel_time:,.0f} s  Err={base.error:.2e}  iterations={base.iterations}")

    summary = {"base": base.total_travel_time, "runs": []}
    for signals_only in (False, True):
        tag = "signals" if signals_only else "joint"
        for seed in args.seeds:
            o = run_sa(network, od, params, SAParams(seed=seed, signals_only=signals_only))
            print(f"{tag} seed {seed}: TT={o.best_objective:,.0f} s  improvement={o.improvement:.2%}  "
                  f"evaluations={o.evaluations}  {o.wall_time:.1f} s")
            (out / f"{tag}_{seed}_trace.csv").write_text(dump_trace(o.trace))
            (out / f"{tag}_{seed}_solution.csv").write_text(dump_solution(network, o.best_solution))
            summary["runs"].append({
                "mode": tag, "seed": seed, "best": o.best_objective, "improvement": o.improvement,
                "expanded": [network.links[i].label for i in o.best_solution.expanded_links()],
                "splits": {str(s.node): g for s, g in zip(network.signals, o.best_solution.green_split)},
            })
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")


if __name__ == "__main__":
    main()
