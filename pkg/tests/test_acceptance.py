"""End-to-end acceptance checks on the reference instance.

Each test records one PASS/FAIL line (printed in the terminal summary) before
asserting. Full annealing runs are cached in module-scoped fixtures.
"""

import time

import numpy as np
import pytest

import netdesign.annealing as annealing_mod
import netdesign.assignment as assignment_mod
from netdesign.annealing import SAParams, parse_trace, run_sa
from netdesign.assignment import GPConfig, column_generation, gp_update, initialize, solve_ue
from netdesign.cli import main
from netdesign.costs import CostParams, approach_state, beckmann_integral, link_time, link_time_derivative, signal_delay, x_kink
from netdesign.network import Solution, solution_cost
from netdesign.oracle import OracleConfig, solve_ue_msa

from .conftest import ACCEPTANCE, LINEAR, braess, two_link
from .test_costs import _central_mp

P = CostParams()
TARGET_BASE = 7_615_000.0
SEEDS = (0, 1, 2)


def record(number, ok, detail):
    ACCEPTANCE.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {detail}")
    assert ok, detail


def test_criterion_01_assign_converges_fast(tmp_path):
    started = time.perf_counter()
    status = main(["--mode", "assign", "--out", str(tmp_path)])
    elapsed = time.perf_counter() - started
    import json

    report = json.loads((tmp_path / "report.json").read_text())
    ok = status == 0 and report["convergence_error"] <= 1e-3 and report["iterations"] <= 500 and elapsed <= 1.0
    record(1, ok, f"Err={report['convergence_error']:.2e} after {report['iterations']} iterations in {elapsed:.3f} s")


def _agreement(network, od, params, gap=1e-6):
    # both solvers are driven to the same convergence level
    sol = Solution.initial(network)
    gp = solve_ue(network, od, sol, params, GPConfig(tolerance=gap, max_iterations=5000))
    msa = solve_ue_msa(network, od, sol, params, OracleConfig(max_iterations=20000, gap_tolerance=gap))
    significant = gp.link_flows >= 0.01 * od.total_demand
    rel = np.abs(gp.link_flows - msa.link_flows)[significant] / gp.link_flows[significant]
    return float(rel.max()), gp


def test_criterion_02_gp_matches_msa(network, od):
    details, ok = [], True
    two_net, two_od = two_link()
    worst, gp = _agreement(two_net, two_od, LINEAR)
    ok &= worst <= 0.01 and np.allclose(gp.link_flows, [20.0, 10.0], rtol=0.01)
    details.append(f"2-link {worst:.1e}")
    b_net, b_od = braess()
    worst, _ = _agreement(b_net, b_od, LINEAR)
    ok &= worst <= 0.01
    details.append(f"Braess {worst:.1e}")
    worst, _ = _agreement(network, od, P)
    ok &= worst <= 0.01
    details.append(f"reference {worst:.1e}")
    record(2, ok, "max relative link-flow difference: " + ", ".join(details))


def test_criterion_03_base_total_travel_time(network, od):
    tt = solve_ue(network, od, Solution.initial(network), P).total_travel_time
    dev = tt / TARGET_BASE - 1.0
    record(3, abs(dev) <= 0.15, f"base total travel time {tt:,.0f} s ({dev:+.1%} from {TARGET_BASE:,.0f})")


class ConstraintMonitor:
    """Checks decision vectors at every evaluation and path flows after every GP update."""

    def __init__(self, network, sa):
        self.network = network
        self.sa = sa
        self.evaluations = 0
        self.updates = 0
        self.violations = []

    def check_solution(self, solution):
        self.evaluations += 1
        for j, g in enumerate(solution.green_split):
            a, b = solution.phase_ratios(j)
            if a + b != 1.0:
                self.violations.append(f"splits {a}, {b} not complementary")
            if not self.sa.min_split <= g <= self.sa.max_split:
                self.violations.append(f"split {g} out of bounds")
        if solution_cost(self.network, solution) > 900:
            self.violations.append(f"expansion cost {solution_cost(self.network, solution)}")

    def check_state(self, state):
        self.updates += 1
        for pair in state.paths:
            if any(f < 0 for f in pair.flows):
                self.violations.append("negative path flow")
            if abs(sum(pair.flows) - pair.demand) > 1e-9 * pair.demand:
                self.violations.append(f"demand {pair.origin}->{pair.destination} not conserved")
        if np.any(state.x < 0):
            self.violations.append("negative link flow")


@pytest.fixture(scope="module")
def joint_runs(network, od):
    """Full joint runs (seed 0 first, more seeds only if needed) under the constraint monitor."""
    sa = SAParams()
    monitor = ConstraintMonitor(network, sa)
    real_solve, real_update = assignment_mod.solve_ue, assignment_mod.gp_update

    def solve(net, od_, solution, *args, **kwargs):
        monitor.check_solution(solution)
        return real_solve(net, od_, solution, *args, **kwargs)

    def update(state, config):
        step = real_update(state, config)
        monitor.check_state(state)
        return step

    runs = []
    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(annealing_mod, "solve_ue", solve)
        mp.setattr(assignment_mod, "gp_update", update)
        for seed in SEEDS:
            runs.append(run_sa(network, od, P, SAParams(seed=seed)))
            if runs[-1].improvement >= 0.08:
                break
    return runs, monitor


@pytest.fixture(scope="module")
def signal_runs(network, od):
    runs = []
    for seed in SEEDS:
        runs.append(run_sa(network, od, P, SAParams(seed=seed, signals_only=True)))
        if runs[-1].improvement >= 0.03:
            break
    return runs


def test_criterion_04_improvements(joint_runs, signal_runs):
    joint = max(r.improvement for r in joint_runs[0])
    signals = max(r.improvement for r in signal_runs)
    ok = joint >= 0.08 and signals >= 0.03
    record(
        4, ok,
        f"joint {joint:.2%} (>= 8%, {len(joint_runs[0])} seed(s)), signals-only {signals:.2%} (>= 3%, {len(signal_runs)} seed(s))",
    )


def test_criterion_05_constraints(joint_runs):
    runs, monitor = joint_runs
    for r in runs:
        monitor.check_solution(r.best_solution)
    ok = not monitor.violations and monitor.evaluations > 0 and monitor.updates > 0
    record(
        5, ok,
        f"{len(monitor.violations)} violations over {monitor.evaluations} evaluations and {monitor.updates} GP updates",
    )


def test_criterion_06_numerics(network, od):
    rng = np.random.default_rng(2024)
    sol = Solution.initial(network).with_split(1, 0.35).with_expand(network.link_index(7, 8), True)
    worst_fd = 0.0
    for i, link in enumerate(network.links):
        for x in rng.uniform(1.0, 2.0 * link.base_capacity, 10):
            if link.enters_signal and abs(x - x_kink(approach_state(network, i, sol), P)) < 1.0:
                continue
            fd = _central_mp(lambda v: link_time(network, i, v, sol, P), x)
            an = link_time_derivative(network, i, x, sol, P)
            worst_fd = max(worst_fd, abs(an - fd) / abs(fd) if fd else abs(an))

    worst_gap = 0.0
    for i, link in enumerate(network.links):
        if link.enters_signal:
            state = approach_state(network, i, sol)
            k = x_kink(state, P)
            worst_gap = max(worst_gap, abs(signal_delay(np.nextafter(k, 0), state, P) - signal_delay(np.nextafter(k, np.inf), state, P)))

    worst_rise = -np.inf
    for solution in (Solution.initial(network), sol):
        state = initialize(network, od, solution, P)

        def exact():
            return sum(beckmann_integral(network, i, float(state.x[i]), solution, P) for i in range(len(network.links)))

        prev = exact()
        for _ in range(40):
            column_generation(state)
            gp_update(state, GPConfig())
            now = exact()
            worst_rise = max(worst_rise, (now - prev) / prev)
            prev = now
    ok = worst_fd <= 1e-6 and worst_gap <= 1e-9 and worst_rise <= 1e-9
    record(
        6, ok,
        f"derivative rel err {worst_fd:.1e}, kink gap {worst_gap:.1e} s, max Beckmann rise {worst_rise:.1e}",
    )


def test_criterion_07_sensitivity(network, od):
    from netdesign.annealing import sensitivity_sweep

    points = sensitivity_sweep(network, od, P, SAParams(), GPConfig(), (0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0))
    series = [p.best_objective for p in points]
    by = {p.fraction: p.best_objective for p in points}
    monotone = all(b <= a for a, b in zip(series, series[1:]))
    first, second = by[0.0] - by[0.5], by[0.5] - by[1.0]
    ok = monotone and second < first
    record(7, ok, f"series {', '.join(f'{v:,.0f}' for v in series)}; gain 0-50% {first:,.0f}, 50-100% {second:,.0f}")


@pytest.fixture(scope="module")
def cli_runs(tmp_path_factory):
    runs = []
    for k in range(2):
        out = tmp_path_factory.mktemp(f"joint{k}")
        started = time.perf_counter()
        status = main(["--mode", "optimize", "--seed", "0", "--out", str(out)])
        runs.append((out, status, time.perf_counter() - started))
    return runs


def test_criterion_08_best_trace_monotone(cli_runs):
    out, status, _ = cli_runs[0]
    trace = parse_trace((out / "trace.csv").read_text())
    best = [r.best for r in trace]
    ok = status == 0 and len(trace) > 0 and all(b <= a for a, b in zip(best, best[1:]))
    record(8, ok, f"E_best non-increasing over {len(trace)} trace rows ({best[0]:,.0f} -> {best[-1]:,.0f})")


def test_criterion_09_byte_identical(cli_runs):
    (a, _, _), (b, _, _) = cli_runs
    same = {name: (a / name).read_bytes() == (b / name).read_bytes() for name in ("trace.csv", "solution.csv")}
    record(9, all(same.values()), "identical: " + ", ".join(f"{k}={v}" for k, v in same.items()))


def test_criterion_10_runtime(cli_runs):
    times = [t for _, _, t in cli_runs]
    record(10, max(times) <= 60.0, "full joint run wall time " + ", ".join(f"{t:.1f} s" for t in times))
