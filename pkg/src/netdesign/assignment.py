"""Path-based gradient projection for static user-equilibrium assignment.

Each iteration re-prices links, adds the current shortest path of every OD
pair to its path set when it is new (column generation), then moves flow from
every costlier path toward the shortest one with a Newton-like step scaled by
the link-time derivatives on the links the two paths do not share.
"""

from __future__ import annotations

import heapq
import io
import csv
from dataclasses import dataclass, field

import numpy as np

from .costs import CostModel, CostParams
from .network import Network, ODMatrix, Solution


class AssignmentError(RuntimeError):
    pass


class UnreachableError(AssignmentError):
    pass


@dataclass(frozen=True)
class GPConfig:
    tolerance: float = 1e-3
    max_iterations: int = 500
    step_size: float = 1.0
    max_halvings: int = 30

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


@dataclass(frozen=True)
class Path:
    links: tuple[int, ...]
    nodes: tuple[int, ...]

    def incidence(self, n_links: int) -> np.ndarray:
        delta = np.zeros(n_links)
        delta[list(self.links)] = 1.0
        return delta

    def cost(self, times) -> float:
        return float(sum(times[a] for a in self.links))


def path_nodes(network: Network, links: tuple[int, ...]) -> tuple[int, ...]:
    if not links:
        return ()
    return (network.links[links[0]].origin, *(network.links[a].destination for a in links))


class _Graph:
    """Adjacency in a form cheap enough to run label-setting thousands of times."""

    def __init__(self, network: Network):
        self.out: dict[int, list[tuple[int, int]]] = {n: [] for n in network.node_ids}
        for i, l in enumerate(network.links):
            self.out[l.origin].append((l.destination, i))
        for arcs in self.out.values():
            arcs.sort()

    def tree(
        self, times, origin: int, targets=None
    ) -> dict[int, tuple[float, tuple[int, ...], tuple[int, ...]]]:
        """Shortest paths from ``origin`` to every reachable node (or until ``targets`` are settled).

        Labels are ordered by (time, node sequence), so among equal-time paths
        the lexicographically smallest node sequence wins.
        """
        settled: dict[int, tuple[float, tuple[int, ...], tuple[int, ...]]] = {}
        tentative: dict[int, tuple[float, tuple[int, ...]]] = {origin: (0.0, (origin,))}
        heap = [(0.0, (origin,), ())]
        out = self.out
        remaining = len(targets) if targets is not None else -1
        pop, push = heapq.heappop, heapq.heappush
        while heap:
            d, nodes, links = pop(heap)
            u = nodes[-1]
            if u in settled:
                continue
            settled[u] = (d, nodes, links)
            if targets is not None and u in targets:
                remaining -= 1
                if remaining == 0:
                    break
            for v, a in out[u]:
                if v in settled:
                    continue
                nd = d + times[a]
                prev = tentative.get(v)
                if prev is None or nd < prev[0] or (nd == prev[0] and nodes + (v,) < prev[1]):
                    label = nodes + (v,)
                    tentative[v] = (nd, label)
                    push(heap, (nd, label, links + (a,)))
        return settled

def shortest_path(network: Network, times, origin: int, destination: int) -> Path:
    if any(not t > 0 for t in times):
        raise ValueError("link times must be positive")
    tree = _Graph(network).tree(list(times), origin)
    if destination not in tree or origin == destination:
        raise UnreachableError(f"node {destination} is unreachable from {origin}")
    _, nodes, links = tree[destination]
    return Path(links, nodes)


@dataclass
class ODPaths:
    """Retained paths of one OD pair with their flows; ``shortest`` indexes the designated path."""

    origin: int
    destination: int
    demand: float
    paths: list[tuple[int, ...]] = field(default_factory=list)
    flows: list[float] = field(default_factory=list)
    shortest: int = 0

    def copy(self) -> ODPaths:
        return ODPaths(self.origin, self.destination, self.demand, list(self.paths), list(self.flows), self.shortest)


@dataclass
class PathSet:
    pairs: dict[tuple[int, int], ODPaths]

    def copy(self) -> PathSet:
        return PathSet({k: v.copy() for k, v in self.pairs.items()})

    def __iter__(self):
        return iter(self.pairs.values())

    def path_count(self) -> int:
        return sum(len(p.paths) for p in self.pairs.values())

    def link_flows(self, n_links: int) -> np.ndarray:
        x = [0.0] * n_links
        for od in self.pairs.values():
            for path, f in zip(od.paths, od.flows):
                if f:
                    for a in path:
                        x[a] += f
        return np.array(x)


@dataclass
class AssignmentResult:
    link_flows: np.ndarray
    link_times: np.ndarray
    paths: PathSet
    error: float
    iterations: int
    converged: bool
    total_travel_time: float
    beckmann: float
    trace: list[tuple[int, float, float, float]] = field(default_factory=list)


class GPState:
    """Mutable solver state: path set, link flows and the cost model that prices them."""

    def __init__(self, network: Network, od: ODMatrix, model: CostModel, paths: PathSet, graph: _Graph | None = None):
        self.network = network
        self.od = od
        self.model = model
        self.paths = paths
        self.graph = graph or _Graph(network)
        self.n_links = len(network.links)
        self.x = paths.link_flows(self.n_links)
        self.times = self._price(self.x)
        self._beckmann = None

    def _price(self, x: np.ndarray) -> list[float]:
        t = self.model.times(x)
        if not np.all(np.isfinite(t)):
            raise AssignmentError("non-finite link time encountered")
        return t.tolist()

    def reprice(self) -> None:
        self.times = self._price(self.x)

    def aggregate(self) -> None:
        self.x = self.paths.link_flows(self.n_links)
        self._beckmann = None

    def origins(self) -> dict[int, list[ODPaths]]:
        groups: dict[int, list[ODPaths]] = {}
        for od in self.paths:
            groups.setdefault(od.origin, []).append(od)
        return groups

    def total_travel_time(self) -> float:
        return float(np.dot(self.x, self.times))

    def beckmann(self) -> float:
        if self._beckmann is None:
            self._beckmann = self.model.beckmann_objective(self.x)
        return self._beckmann

    def relative_gap(self) -> float:
        tt = self.total_travel_time()
        best = 0.0
        for origin, group in self.origins().items():
            tree = self.graph.tree(self.times, origin)
            for od in group:
                best += od.demand * tree[od.destination][0]
        return (tt - best) / tt if tt > 0 else 0.0


def initialize(network: Network, od: ODMatrix, solution: Solution, params: CostParams) -> GPState:
    """All-or-nothing loading on free-flow shortest paths."""
    model = CostModel(network, solution, params)
    graph = _Graph(network)
    times = model.times(np.zeros(len(network.links))).tolist()
    pairs: dict[tuple[int, int], ODPaths] = {}
    trees: dict[int, dict] = {}
    for r, s in od.pairs():
        if r not in trees:
            if r not in graph.out:
                raise UnreachableError(f"origin {r} is not a network node")
            trees[r] = graph.tree(times, r)
        if s not in trees[r] or r == s:
            raise UnreachableError(f"node {s} is unreachable from {r}")
        links = trees[r][s][2]
        pairs[r, s] = ODPaths(r, s, od.entries[r, s], [links], [od.entries[r, s]], 0)
    return GPState(network, od, model, PathSet(pairs), graph)


def column_generation(state: GPState) -> int:
    """Designate each OD's current shortest path, appending it when new. Returns paths added."""
    added = 0
    for origin, group in state.origins().items():
        tree = state.graph.tree(state.times, origin, {od.destination for od in group})
        for od in group:
            if od.destination not in tree:
                raise UnreachableError(f"node {od.destination} is unreachable from {origin}")
            best = tree[od.destination][2]
            try:
                od.shortest = od.paths.index(best)
            except ValueError:
                od.paths.append(best)
                od.flows.append(0.0)
                od.shortest = len(od.paths) - 1
                added += 1
    return added


def path_costs(od: ODPaths, times) -> list[float]:
    return [sum([times[a] for a in p]) for p in od.paths]


def convergence_error(state: GPState) -> float:
    err = 0.0
    times = state.times
    for od in state.paths:
        d = path_costs(od, times)
        dbar = d[od.shortest]
        total = 0.0
        for k, f in enumerate(od.flows):
            if k != od.shortest and f > 0:
                total += (f / od.demand) * ((d[k] - dbar) / d[k])
        err = max(err, total)
    return err


def _proposal(state: GPState, derivs, step: float) -> list[list[float]]:
    times = state.times
    out = []
    for od in state.paths:
        d = path_costs(od, times)
        kbar = od.shortest
        sp = set(od.paths[kbar])
        flows = list(od.flows)
        moved = 0.0
        for k, path in enumerate(od.paths):
            if k == kbar:
                continue
            diff = sp.symmetric_difference(path)
            S = sum(derivs[a] for a in diff)
            if not S > 0:
                raise AssignmentError(
                    f"zero second-derivative scaling for OD {od.origin}->{od.destination}"
                )
            flows[k] = max(flows[k] - step / S * (d[k] - d[kbar]), 0.0)
            moved += flows[k]
        flows[kbar] = od.demand - moved
        out.append(flows)
    return out


def gp_update(state: GPState, config: GPConfig) -> float:
    """One projected flow shift on every OD pair; returns the step size that was used.

    The step is halved until the Beckmann objective does not increase; if no
    halving succeeds the state is left untouched and 0.0 is returned.
    """
    derivs = state.model.derivatives(state.x).tolist()
    before = state.beckmann()
    old = [list(od.flows) for od in state.paths]
    step = config.step_size
    for _ in range(config.max_halvings + 1):
        for od, flows in zip(state.paths, _proposal(state, derivs, step)):
            od.flows = flows
        state.aggregate()
        if state.beckmann() <= before:
            break
        for od, flows in zip(state.paths, old):
            od.flows = list(flows)
        state.aggregate()
        step *= 0.5
    else:
        state.reprice()
        return 0.0
    for od in state.paths:
        keep = [k for k, f in enumerate(od.flows) if k == od.shortest or f > 0]
        if len(keep) != len(od.paths):
            od.paths = [od.paths[k] for k in keep]
            od.flows = [od.flows[k] for k in keep]
            od.shortest = keep.index(od.shortest)
    state.reprice()
    return step


def warm_state(
    network: Network, od: ODMatrix, solution: Solution, params: CostParams, paths: PathSet
) -> GPState:
    model = CostModel(network, solution, params)
    for pair, q in od.entries.items():
        if pair not in paths.pairs or paths.pairs[pair].demand != q:
            raise ValueError(f"warm-start path set does not match OD pair {pair}")
    return GPState(network, od, model, paths.copy())


def solve_ue(
    network: Network,
    od: ODMatrix,
    solution: Solution,
    params: CostParams,
    config: GPConfig = GPConfig(),
    warm_start: PathSet | None = None,
    record_trace: bool = False,
) -> AssignmentResult:
    if warm_start is not None:
        state = warm_state(network, od, solution, params, warm_start)
    else:
        state = initialize(network, od, solution, params)
    trace = []
    iterations = 0
    converged = False
    while True:
        column_generation(state)
        err = convergence_error(state)
        if record_trace:
            trace.append((iterations, err, state.beckmann(), state.total_travel_time()))
        if err <= config.tolerance:
            converged = True
            break
        if iterations >= config.max_iterations:
            break
        gp_update(state, config)
        iterations += 1
    return AssignmentResult(
        link_flows=state.x.copy(),
        link_times=np.array(state.times),
        paths=state.paths,
        error=err,
        iterations=iterations,
        converged=converged,
        total_travel_time=state.total_travel_time(),
        beckmann=state.beckmann(),
        trace=trace,
    )


TRACE_COLUMNS = ("iteration", "error", "beckmann", "total_travel_time")


def dump_trace(trace) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for it, err, bk, tt in trace:
        writer.writerow([it, repr(err), repr(bk), repr(tt)])
    return out.getvalue()
