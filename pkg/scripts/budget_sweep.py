"""Best total travel time against budget level, one annealing run per level.

    python3 scripts/budget_sweep.py --seed 0 --fractions 0 0.25 0.5 0.75 1
"""

import argparse

from netdesign.annealing import SAParams, sensitivity_sweep
from netdesign.assignment import GPConfig
from netdesign.cli import DEFAULT_FRACTIONS, bundled, dump_sensitivity
from netdesign.costs import CostParams
from netdesign.network import load_links, load_od


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--fractions", type=float, nargs="+", default=list(DEFAULT_FRACTIONS))
    ap.add_argument("--out", default=None, help="write the series as CSV here")
    args = ap.parse_args()

    network = load_links(bundled("links.csv"))
    od = load_od(bundled("od.csv"), network)
    points = sensitivity_sweep(network, od, CostParams(), SAParams(seed=args.seed), GPConfig(), args.fractions)
    for p in points:
        print(f"{p.fraction:4.2f}  budget {p.budget:6.0f}  TT {p.best_objective:12,.0f}  {p.improvement:6.2%}  "
              f"{len(p.expanded)} links")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(dump_sensitivity(points, network))


if __name__ == "__main__":
    main()
