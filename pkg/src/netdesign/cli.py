"""Batch command-line runner.

    python -m netdesign --mode assign --out results/base
    python -m netdesign --mode optimize --seed 3 --chains 2 --out results/joint
    python -m netdesign --mode sensitivity --config my.json --out results/sweep

Exit codes: 0 success, 3 validation failure, 4 solver failure, 5 I/O failure
(2 is left to argparse for usage errors).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .annealing import (
    AnnealingAborted,
    FeasibilityError,
    OptimizationOutcome,
    SAParams,
    dump_trace,
    run_chains,
    sensitivity_sweep,
)
from .assignment import AssignmentError, GPConfig, solve_ue
from .costs import CostModel, CostParams
from .network import (
    InstanceError,
    Network,
    ODMatrix,
    Solution,
    ValidationReport,
    load_links,
    load_od,
    solution_cost,
    validate,
)

log = logging.getLogger("netdesign")

EXIT_OK = 0
EXIT_VALIDATION = 3
EXIT_SOLVER = 4
EXIT_IO = 5

MODES = ("assign", "optimize", "signals-only", "sensitivity", "validate")
DEFAULT_FRACTIONS = (0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0)


def bundled(name: str) -> str:
    return str(resources.files("netdesign") / "data" / name)


@dataclass
class RunConfig:
    links: str = field(default_factory=lambda: bundled("links.csv"))
    od: str = field(default_factory=lambda: bundled("od.csv"))
    mode: str = "assign"
    budget: float = 900.0
    seed: int = 0
    chains: int = 1
    out: str = "results"
    cost: CostParams = field(default_factory=CostParams)
    gp: GPConfig = field(default_factory=GPConfig)
    sa: SAParams = field(default_factory=SAParams)
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    # optional decision vector for assign mode: node id -> phase-A split, expanded link labels
    green_split: dict[str, float] = field(default_factory=dict)
    expand: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fractions"] = list(self.fractions)
        d["expand"] = list(self.expand)
        return d


class ConfigError(ValueError):
    pass


def _section(cls, data: dict, name: str):
    known = set(cls.__dataclass_fields__)
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from None


def load_config(path: str | None, args: argparse.Namespace | None = None) -> RunConfig:
    """Merge defaults, a JSON config document and command-line flags (flags win)."""
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
    data = dict(data)
    cfg = RunConfig()
    cost = _section(CostParams, data.pop("cost", {}), "cost")
    gp = _section(GPConfig, data.pop("gp", {}), "gp")
    sa = _section(SAParams, data.pop("sa", {}), "sa")
    sens = data.pop("sensitivity", {})
    solution = data.pop("solution", {})
    for key, value in data.items():
        if key not in RunConfig.__dataclass_fields__ or key in ("cost", "gp", "sa"):
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, value)
    cfg.cost, cfg.gp, cfg.sa = cost, gp, sa
    if "fractions" in sens:
        cfg.fractions = tuple(float(f) for f in sens["fractions"])
    cfg.green_split = {str(k): float(v) for k, v in solution.get("green_split", {}).items()}
    cfg.expand = tuple(str(x) for x in solution.get("expand", ()))

    if args is not None:
        for key in ("links", "od", "mode", "budget", "seed", "chains", "out"):
            value = getattr(args, key, None)
            if value is not None:
                setattr(cfg, key, value)
        if getattr(args, "tolerance", None) is not None:
            cfg.gp = replace(cfg.gp, tolerance=args.tolerance)
    cfg.sa = replace(cfg.sa, seed=int(cfg.seed), signals_only=cfg.mode == "signals-only" or cfg.sa.signals_only)
    if cfg.mode not in MODES:
        raise ConfigError(f"unknown mode {cfg.mode!r}; expected one of {MODES}")
    if cfg.chains < 1:
        raise ConfigError("chains must be >= 1")
    if cfg.budget < 0:
        raise ConfigError("budget must be >= 0")
    if any(not 0.0 <= f <= 1.0 for f in cfg.fractions):
        raise ConfigError("budget fractions must lie in [0, 1]")
    return cfg


# ---------------------------------------------------------------------------
# output formats


SOLUTION_COLUMNS = ("origin", "destination", "expanded_capacity", "cycle_length", "green_ratio")
FLOW_COLUMNS = ("origin", "destination", "flow", "time", "capacity", "green_ratio")
SENSITIVITY_COLUMNS = ("budget_fraction", "budget", "best_objective", "base_objective", "improvement", "expanded_links")


def _ratios(network: Network, solution: Solution) -> dict[int, float]:
    out = {}
    for j, sig in enumerate(network.signals):
        g, rest = solution.phase_ratios(j)
        out.update({i: g for i in sig.phase_a_links})
        out.update({i: rest for i in sig.phase_b_links})
    return out


def dump_solution(network: Network, solution: Solution) -> str:
    """Per-link table: expansion amount taken (0 if none), cycle length and green ratio (0 if unsignalized)."""
    ratios = _ratios(network, solution)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(SOLUTION_COLUMNS)
    for i, l in enumerate(network.links):
        writer.writerow(
            [
                l.origin,
                l.destination,
                repr(l.expansion_amount if solution.expand[i] else 0.0),
                repr(float(l.cycle_length)),
                repr(float(ratios.get(i, 0.0))),
            ]
        )
    return out.getvalue()


def parse_solution(text: str, network: Network) -> Solution:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows or tuple(rows[0].keys()) != SOLUTION_COLUMNS:
        raise InstanceError("solution file has an unexpected header or no rows")
    expand = [False] * len(network.links)
    ratio: dict[int, float] = {}
    for row in rows:
        i = network.link_index(int(row["origin"]), int(row["destination"]))
        expand[i] = float(row["expanded_capacity"]) > 0
        ratio[i] = float(row["green_ratio"])
    splits = []
    for sig in network.signals:
        a = {ratio[i] for i in sig.phase_a_links}
        b = {ratio[i] for i in sig.phase_b_links}
        if len(a) != 1 or len(b) != 1:
            raise InstanceError(f"node {sig.node}: approaches of one phase carry different green ratios")
        g = a.pop()
        if abs(g + b.pop() - 1.0) > 1e-12:
            raise InstanceError(f"node {sig.node}: phase green ratios do not sum to one")
        splits.append(g)
    return Solution(tuple(expand), tuple(splits))


def dump_flows(network: Network, solution: Solution, flows, times) -> str:
    model_caps = CostModel(network, solution, CostParams()).capacity
    ratios = _ratios(network, solution)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(FLOW_COLUMNS)
    for i, l in enumerate(network.links):
        writer.writerow(
            [l.origin, l.destination, repr(float(flows[i])), repr(float(times[i])),
             repr(float(model_caps[i])), repr(float(ratios.get(i, 0.0)))]
        )
    return out.getvalue()


def parse_flows(text: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != FLOW_COLUMNS:
        raise ValueError(f"unexpected flow table header {reader.fieldnames}")
    return [
        {"origin": int(r["origin"]), "destination": int(r["destination"]),
         **{k: float(r[k]) for k in FLOW_COLUMNS[2:]}}
        for r in reader
    ]


def dump_sensitivity(points, network: Network) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(SENSITIVITY_COLUMNS)
    for p in points:
        labels = " ".join(network.links[i].label for i in p.expanded)
        writer.writerow(
            [repr(p.fraction), repr(p.budget), repr(p.best_objective), repr(p.base_objective),
             repr(p.improvement), labels]
        )
    return out.getvalue()


def parse_sensitivity(text: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != SENSITIVITY_COLUMNS:
        raise ValueError(f"unexpected sensitivity header {reader.fieldnames}")
    rows = []
    for r in reader:
        row = {k: float(r[k]) for k in SENSITIVITY_COLUMNS[:-1]}
        row["expanded_links"] = r["expanded_links"].split()
        rows.append(row)
    return rows


def solution_block(network: Network, solution: Solution) -> dict:
    return {
        "expanded_links": [network.links[i].label for i in solution.expanded_links()],
        "expansion_cost": solution_cost(network, solution),
        "budget": network.budget,
        "signals": [
            {
                "node": sig.node,
                "cycle_length": sig.cycle_length,
                "phase_a": [network.links[i].label for i in sig.phase_a_links],
                "phase_b": [network.links[i].label for i in sig.phase_b_links],
                "phase_a_green_ratio": solution.green_split[j],
                "phase_b_green_ratio": 1.0 - solution.green_split[j],
            }
            for j, sig in enumerate(network.signals)
        ],
    }


def solution_from_block(network: Network, block: dict) -> Solution:
    expand = [False] * len(network.links)
    for label in block["expanded_links"]:
        o, d = label.split("-")
        expand[network.link_index(int(o), int(d))] = True
    by_node = {s["node"]: s["phase_a_green_ratio"] for s in block["signals"]}
    return Solution(tuple(expand), tuple(float(by_node[s.node]) for s in network.signals))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _report(cfg: RunConfig, mode: str, **body) -> dict:
    return {"mode": mode, **body, "provenance": {"version": __version__, "config": cfg.to_dict()}}


def _write_report(out: Path, report: dict) -> None:
    _write(out / "report.json", json.dumps(report, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# ---------------------------------------------------------------------------
# commands


def load_instance(cfg: RunConfig) -> tuple[Network, ODMatrix]:
    network = load_links(cfg.links, budget=cfg.budget)
    od = load_od(cfg.od)
    return network, od


def configured_solution(cfg: RunConfig, network: Network) -> Solution:
    solution = Solution.initial(network)
    for label in cfg.expand:
        o, d = label.split("-")
        solution = solution.with_expand(network.link_index(int(o), int(d)), True)
    by_node = {s.node: j for j, s in enumerate(network.signals)}
    for node, g in cfg.green_split.items():
        if int(node) not in by_node:
            raise ConfigError(f"green split given for unsignalized node {node}")
        solution = solution.with_split(by_node[int(node)], g)
    return solution


def cmd_validate(cfg: RunConfig) -> tuple[int, ValidationReport]:
    out = Path(cfg.out)
    report = ValidationReport()
    try:
        network, od = load_instance(cfg)
    except InstanceError as exc:
        report.add("parse", str(exc), exc.line)
    else:
        report = validate(network, od, split_bounds=(cfg.sa.min_split, cfg.sa.max_split))
    for v in report.violations:
        print(f"validation: {v}", file=sys.stderr)
    _write_report(
        out,
        _report(cfg, "validate", ok=report.ok, violations=[
            {"kind": v.kind, "message": v.message, "line": v.line} for v in report.violations
        ]),
    )
    return (EXIT_OK if report.ok else EXIT_VALIDATION), report


def cmd_assign(cfg: RunConfig) -> tuple[int, dict]:
    started = time.perf_counter()
    network, od = load_instance(cfg)
    solution = configured_solution(cfg, network)
    check = validate(network, od, solution, (cfg.sa.min_split, cfg.sa.max_split))
    if not check.ok:
        for v in check.violations:
            print(f"validation: {v}", file=sys.stderr)
        return EXIT_VALIDATION, {}
    result = solve_ue(network, od, solution, cfg.cost, cfg.gp)
    out = Path(cfg.out)
    _write(out / "flows.csv", dump_flows(network, solution, result.link_flows, result.link_times))
    report = _report(
        cfg,
        "assign",
        total_travel_time=result.total_travel_time,
        convergence_error=result.error,
        converged=result.converged,
        iterations=result.iterations,
        paths=result.paths.path_count(),
        wall_time=time.perf_counter() - started,
        solution=solution_block(network, solution),
    )
    _write_report(out, report)
    if not result.converged:
        print(f"assignment stopped at {result.iterations} iterations with Err={result.error:.3g}", file=sys.stderr)
        return EXIT_SOLVER, report
    return EXIT_OK, report


def _outcome_body(network: Network, outcome: OptimizationOutcome) -> dict:
    best = outcome.best_assignment
    return {
        "base_objective": outcome.base_objective,
        "initial_objective": outcome.initial_objective,
        "best_objective": outcome.best_objective,
        "improvement": outcome.improvement,
        "convergence_error": best.error if best is not None else None,
        "iterations": outcome.iterations,
        "evaluations": outcome.evaluations,
        "t_initial": outcome.t_initial,
        "t_final": outcome.t_final,
        "seed": outcome.seed,
        "wall_time": outcome.wall_time,
        "solution": solution_block(network, outcome.best_solution),
    }


def _write_outcome(out: Path, network: Network, outcome: OptimizationOutcome) -> None:
    _write(out / "trace.csv", dump_trace(outcome.trace))
    _write(out / "solution.csv", dump_solution(network, outcome.best_solution))
    best = outcome.best_assignment
    if best is not None:
        _write(out / "flows.csv", dump_flows(network, outcome.best_solution, best.link_flows, best.link_times))


def cmd_optimize(cfg: RunConfig) -> tuple[int, dict]:
    network, od = load_instance(cfg)
    check = validate(network, od, split_bounds=(cfg.sa.min_split, cfg.sa.max_split))
    if not check.ok:
        for v in check.violations:
            print(f"validation: {v}", file=sys.stderr)
        return EXIT_VALIDATION, {}
    out = Path(cfg.out)
    mode = "signals-only" if cfg.sa.signals_only else "optimize"
    try:
        best, runs = run_chains(network, od, cfg.cost, cfg.sa, cfg.gp, cfg.chains)
    except AnnealingAborted as exc:
        _write_outcome(out, network, exc.outcome)
        _write_report(out, _report(cfg, mode, aborted=str(exc), **_outcome_body(network, exc.outcome)))
        print(f"optimization aborted: {exc}", file=sys.stderr)
        return EXIT_SOLVER, {}
    _write_outcome(out, network, best)
    body = _outcome_body(network, best)
    body["chains"] = [{"seed": r.seed, "best_objective": r.best_objective} for r in runs]
    report = _report(cfg, mode, **body)
    _write_report(out, report)
    return EXIT_OK, report


def cmd_sensitivity(cfg: RunConfig) -> tuple[int, dict]:
    started = time.perf_counter()
    network, od = load_instance(cfg)
    check = validate(network, od, split_bounds=(cfg.sa.min_split, cfg.sa.max_split))
    if not check.ok:
        for v in check.violations:
            print(f"validation: {v}", file=sys.stderr)
        return EXIT_VALIDATION, {}
    points = sensitivity_sweep(network, od, cfg.cost, cfg.sa, cfg.gp, cfg.fractions)
    out = Path(cfg.out)
    _write(out / "sensitivity.csv", dump_sensitivity(points, network))
    report = _report(
        cfg,
        "sensitivity",
        total_expansion_cost=network.total_expansion_cost,
        series=[{"budget_fraction": p.fraction, "budget": p.budget, "best_objective": p.best_objective} for p in points],
        wall_time=time.perf_counter() - started,
    )
    _write_report(out, report)
    return EXIT_OK, report


COMMANDS = {
    "validate": cmd_validate,
    "assign": cmd_assign,
    "optimize": cmd_optimize,
    "signals-only": cmd_optimize,
    "sensitivity": cmd_sensitivity,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="netdesign", description="Joint signal timing and capacity expansion design.")
    p.add_argument("--links", help="link table (default: bundled reference instance)")
    p.add_argument("--od", help="OD matrix (default: bundled reference instance)")
    p.add_argument("--config", help="JSON config document")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--budget", type=float, help="expansion budget in cost units")
    p.add_argument("--seed", type=int)
    p.add_argument("--chains", type=int, help="independent annealing chains (distinct seeds)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--tolerance", type=float, help="assignment convergence tolerance")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args)
        status, _ = COMMANDS[cfg.mode](cfg)
        return status
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except InstanceError as exc:
        print(f"instance error: {exc}", file=sys.stderr)
        return EXIT_IO if isinstance(exc.__cause__, OSError) else EXIT_VALIDATION
    except (AssignmentError, FeasibilityError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
