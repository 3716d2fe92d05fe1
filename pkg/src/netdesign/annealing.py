"""Upper-level search: simulated annealing over expansion flags and green splits.

Every candidate is priced by a warm-started user-equilibrium solve, so the
objective of a decision vector is the total travel time of the equilibrium it
induces.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .assignment import AssignmentError, AssignmentResult, GPConfig, PathSet, solve_ue
from .costs import CostParams
from .network import Network, ODMatrix, Solution, solution_cost

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SAParams:
    t_initial: float | None = None  # None: calibrated from a random probe
    t_final: float | None = None  # None: t_initial * cooling_rate ** (levels - 0.5)
    iterations_per_temperature: int = 30
    cooling_rate: float = 0.99
    levels: int = 390
    seed: int = 0
    min_split: float = 0.2
    max_split: float = 0.8
    signals_only: bool = False
    calibration_moves: int = 50
    calibration_acceptance: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.cooling_rate < 1.0:
            raise ValueError("cooling_rate must lie in (0, 1)")
        if self.iterations_per_temperature < 1:
            raise ValueError("iterations_per_temperature must be >= 1")
        if not 0.0 < self.min_split <= self.max_split < 1.0:
            raise ValueError("green split bounds must satisfy 0 < min <= max < 1")
        if self.levels < 0:
            raise ValueError("levels must be >= 0")


class FeasibilityError(AssertionError):
    pass


class AnnealingAborted(RuntimeError):
    """A lower-level solve failed; ``outcome`` holds the best solution found so far."""

    def __init__(self, message: str, outcome: OptimizationOutcome):
        super().__init__(message)
        self.outcome = outcome


@dataclass(frozen=True)
class Move:
    solution: Solution
    kind: str  # "link" or "signal"
    target: int  # link index or signal index
    null: bool = False


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    temperature: float
    objective: float
    accepted: bool
    current: float
    best: float
    move: str
    target: str
    null_move: bool


@dataclass
class OptimizationOutcome:
    best_solution: Solution
    best_objective: float
    base_objective: float
    initial_solution: Solution
    initial_objective: float
    trace: list[TraceRow]
    iterations: int
    evaluations: int
    wall_time: float
    t_initial: float
    t_final: float
    seed: int
    utilities: dict[int, float] = field(default_factory=dict)
    best_assignment: AssignmentResult | None = None

    @property
    def improvement(self) -> float:
        return 1.0 - self.best_objective / self.base_objective


def check_feasible(network: Network, solution: Solution, sa: SAParams) -> None:
    if len(solution.green_split) != len(network.signals) or len(solution.expand) != len(network.links):
        raise FeasibilityError("decision vector does not match the network")
    for g in solution.green_split:
        if not sa.min_split <= g <= sa.max_split:
            raise FeasibilityError(f"green split {g} outside [{sa.min_split}, {sa.max_split}]")
        if g + (1.0 - g) != 1.0:
            raise FeasibilityError(f"phase ratios {g} and {1.0 - g} do not sum to one")
    for i in solution.expanded_links():
        if not network.links[i].expandable:
            raise FeasibilityError(f"link {network.links[i].label} is not a candidate")
    if solution_cost(network, solution) > network.budget:
        raise FeasibilityError(
            f"expansion cost {solution_cost(network, solution)} exceeds budget {network.budget}"
        )


class Evaluator:
    """Prices decision vectors by user-equilibrium total travel time."""

    def __init__(self, network: Network, od: ODMatrix, params: CostParams, gp: GPConfig, sa: SAParams | None = None):
        self.network = network
        self.od = od
        self.params = params
        self.gp = gp
        self.sa = sa
        self.count = 0
        self.cold_restarts = 0
        self.unconverged = 0

    def __call__(self, solution: Solution, warm: PathSet | None = None) -> AssignmentResult:
        if self.sa is not None:
            check_feasible(self.network, solution, self.sa)
        self.count += 1
        result = solve_ue(self.network, self.od, solution, self.params, self.gp, warm_start=warm)
        if not result.converged and warm is not None:
            self.cold_restarts += 1
            result = solve_ue(self.network, self.od, solution, self.params, self.gp)
        if not result.converged:
            self.unconverged += 1
        return result


def project_utility(
    network: Network,
    od: ODMatrix,
    params: CostParams,
    link: int,
    gp: GPConfig = GPConfig(),
    base: AssignmentResult | None = None,
) -> float:
    """Travel time saved by expanding ``link`` alone, all splits at 0.5."""
    if not network.links[link].expandable:
        raise ValueError(f"link {network.links[link].label} is not a candidate")
    start = Solution.initial(network)
    if base is None:
        base = solve_ue(network, od, start, params, gp)
    with_link = solve_ue(network, od, start.with_expand(link, True), params, gp, warm_start=base.paths)
    return base.total_travel_time - with_link.total_travel_time


def project_utilities(
    network: Network, od: ODMatrix, params: CostParams, gp: GPConfig = GPConfig(), base: AssignmentResult | None = None
) -> dict[int, float]:
    if base is None:
        base = solve_ue(network, od, Solution.initial(network), params, gp)
    return {
        i: project_utility(network, od, params, i, gp, base)
        for i, link in enumerate(network.links)
        if link.expandable
    }


def greedy_initial_solution(network: Network, utilities: dict[int, float], split: float = 0.5) -> Solution:
    """Take positive-utility projects in descending order while they fit the budget."""
    chosen = Solution.initial(network, split)
    spent = 0.0
    for i in sorted(utilities, key=lambda i: (-utilities[i], i)):
        cost = network.links[i].unit_cost
        if utilities[i] > 0 and spent + cost <= network.budget:
            chosen = chosen.with_expand(i, True)
            spent += cost
    return chosen


def neighbor(
    network: Network, current: Solution, rng: np.random.Generator, sa: SAParams
) -> Move:
    """Change exactly one decision variable; an unaffordable expansion is a null move."""
    candidates = [] if sa.signals_only else [i for i, l in enumerate(network.links) if l.expandable]
    kinds = [k for k, pool in (("link", candidates), ("signal", network.signals)) if len(pool)]
    if not kinds:
        raise ValueError("no decision variables to perturb")
    kind = kinds[int(rng.integers(len(kinds)))]
    if kind == "signal":
        target = int(rng.integers(len(network.signals)))
        split = float(rng.uniform(sa.min_split, sa.max_split))
        return Move(current.with_split(target, split), "signal", target)
    target = candidates[int(rng.integers(len(candidates)))]
    if current.expand[target]:
        return Move(current.with_expand(target, False), "link", target)
    if solution_cost(network, current) + network.links[target].unit_cost > network.budget:
        return Move(current, "link", target, null=True)
    return Move(current.with_expand(target, True), "link", target)


def metropolis_accept(delta: float, temperature: float, rng: np.random.Generator) -> bool:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if delta <= 0:
        return True
    return bool(rng.random() < math.exp(-delta / temperature))


def calibrate_temperature(
    network: Network,
    start: Solution,
    start_result: AssignmentResult,
    evaluate: Evaluator,
    rng: np.random.Generator,
    sa: SAParams,
) -> float:
    """Temperature at which the median uphill move of a random probe is accepted w.p. ``calibration_acceptance``."""
    uphill = []
    for _ in range(sa.calibration_moves):
        move = neighbor(network, start, rng, sa)
        if move.null:
            continue
        delta = evaluate(move.solution, start_result.paths).total_travel_time - start_result.total_travel_time
        if delta > 0:
            uphill.append(delta)
    if not uphill:
        return max(1e-6 * start_result.total_travel_time, 1e-9)
    return statistics.median(uphill) / math.log(1.0 / sa.calibration_acceptance)


def run_sa(
    network: Network,
    od: ODMatrix,
    params: CostParams,
    sa: SAParams = SAParams(),
    gp: GPConfig = GPConfig(),
) -> OptimizationOutcome:
    started = time.perf_counter()
    rng = np.random.default_rng(sa.seed)
    evaluate = Evaluator(network, od, params, gp, sa)
    base_solution = Solution.initial(network)
    base = evaluate(base_solution)

    utilities: dict[int, float] = {}
    if sa.signals_only:
        current = base_solution
    else:
        utilities = project_utilities(network, od, params, gp, base)
        current = greedy_initial_solution(network, utilities)
    current_result = base if current == base_solution else evaluate(current, base.paths)
    initial_solution, initial_objective = current, current_result.total_travel_time

    t_initial = sa.t_initial
    if t_initial is None:
        t_initial = calibrate_temperature(network, current, current_result, evaluate, rng, sa)
    t_final = sa.t_final
    if t_final is None:
        t_final = t_initial * sa.cooling_rate ** (sa.levels - 0.5)

    best, best_result = current, current_result
    e_current = e_best = current_result.total_travel_time
    trace: list[TraceRow] = []

    def outcome() -> OptimizationOutcome:
        return OptimizationOutcome(
            best_solution=best,
            best_objective=e_best,
            base_objective=base.total_travel_time,
            initial_solution=initial_solution,
            initial_objective=initial_objective,
            trace=trace,
            iterations=len(trace),
            evaluations=evaluate.count,
            wall_time=time.perf_counter() - started,
            t_initial=t_initial,
            t_final=t_final,
            seed=sa.seed,
            utilities=utilities,
            best_assignment=best_result,
        )

    temperature = t_initial
    while temperature >= t_final and t_initial > t_final:
        for _ in range(sa.iterations_per_temperature):
            move = neighbor(network, current, rng, sa)
            label = network.links[move.target].label if move.kind == "link" else str(network.signals[move.target].node)
            if move.null:
                trace.append(
                    TraceRow(len(trace), temperature, e_current, False, e_current, e_best, move.kind, label, True)
                )
                continue
            try:
                result = evaluate(move.solution, current_result.paths)
            except AssignmentError as exc:
                raise AnnealingAborted(f"assignment failed at iteration {len(trace)}: {exc}", outcome()) from exc
            e_j = result.total_travel_time
            accepted = metropolis_accept(e_j - e_current, temperature, rng)
            if accepted:
                current, current_result, e_current = move.solution, result, e_j
                if e_j < e_best:
                    best, best_result, e_best = move.solution, result, e_j
            trace.append(
                TraceRow(len(trace), temperature, e_j, accepted, e_current, e_best, move.kind, label, False)
            )
        temperature *= sa.cooling_rate

    log.info(
        "SA seed %d: best %.1f (base %.1f), %d evaluations, %d cold restarts",
        sa.seed, e_best, base.total_travel_time, evaluate.count, evaluate.cold_restarts,
    )
    return outcome()


def _run_chain(args) -> OptimizationOutcome:
    network, od, params, sa, gp = args
    return run_sa(network, od, params, sa, gp)


def run_chains(
    network: Network,
    od: ODMatrix,
    params: CostParams,
    sa: SAParams,
    gp: GPConfig,
    chains: int = 1,
) -> tuple[OptimizationOutcome, list[OptimizationOutcome]]:
    """Independent chains with seeds ``seed, seed+1, ...``; the best objective wins, ties to the lower seed."""
    jobs = [(network, od, params, replace(sa, seed=sa.seed + k), gp) for k in range(chains)]
    if chains <= 1:
        runs = [_run_chain(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=chains) as pool:
            runs = list(pool.map(_run_chain, jobs))
    best = min(runs, key=lambda o: (o.best_objective, o.seed))
    return best, runs


@dataclass
class SweepPoint:
    fraction: float
    budget: float
    best_objective: float
    base_objective: float
    expanded: list[int]

    @property
    def improvement(self) -> float:
        return 1.0 - self.best_objective / self.base_objective


def sensitivity_sweep(
    network: Network,
    od: ODMatrix,
    params: CostParams,
    sa: SAParams,
    gp: GPConfig,
    budget_fractions,
) -> list[SweepPoint]:
    """One annealing run per budget level, all with the same seed."""
    total = network.total_expansion_cost
    points = []
    for frac in budget_fractions:
        if not 0.0 <= frac <= 1.0:
            raise ValueError(f"budget fraction {frac} outside [0, 1]")
        level = network.with_budget(frac * total)
        out = run_sa(level, od, params, sa, gp)
        points.append(
            SweepPoint(frac, level.budget, out.best_objective, out.base_objective, out.best_solution.expanded_links())
        )
    return points


TRACE_COLUMNS = ("iteration", "temperature", "objective", "accepted", "current", "best", "move", "target", "null_move")


def dump_trace(trace: list[TraceRow]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for r in trace:
        writer.writerow(
            [r.iteration, repr(r.temperature), repr(r.objective), int(r.accepted), repr(r.current),
             repr(r.best), r.move, r.target, int(r.null_move)]
        )
    return out.getvalue()


def parse_trace(text: str) -> list[TraceRow]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
        raise ValueError(f"unexpected trace header {reader.fieldnames}")
    return [
        TraceRow(
            int(row["iteration"]),
            float(row["temperature"]),
            float(row["objective"]),
            row["accepted"] == "1",
            float(row["current"]),
            float(row["best"]),
            row["move"],
            row["target"],
            row["null_move"] == "1",
        )
        for row in reader
    ]
