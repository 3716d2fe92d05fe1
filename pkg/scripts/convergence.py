"""Per-iteration convergence error and Beckmann objective of the base assignment."""

import argparse

from netdesign.assignment import GPConfig, dump_trace, solve_ue
from netdesign.cli import bundled
from netdesign.costs import CostParams
from netdesign.network import Solution, load_links, load_od


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--tolerance", type=float, default=1e-8)
    ap.add_argument("--study-duration", type=float, default=CostParams().study_duration_T)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    network = load_links(bundled("links.csv"))
    od = load_od(bundled("od.csv"), network)
    params = CostParams(study_duration_T=args.study_duration)
    result = solve_ue(network, od, Solution.initial(network), params,
                      GPConfig(tolerance=args.tolerance, max_iterations=10_000), record_trace=True)
    text = dump_trace(result.trace)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text, end="")


if __name__ == "__main__":
    main()
