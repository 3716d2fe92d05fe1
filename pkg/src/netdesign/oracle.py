"""Independent checks for the assignment solver.

``solve_ue_msa`` averages all-or-nothing loadings and keeps no path sets; its
shortest paths come from a Bellman-Ford pass over the link list so that it has
no code in common with the gradient projection solver except link costs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costs import CostModel, CostParams
from .network import Network, ODMatrix, Solution


@dataclass(frozen=True)
class OracleConfig:
    max_iterations: int = 20000
    gap_tolerance: float = 1e-6

    def __post_init__(self):
        if self.max_iterations <= 0 or not self.gap_tolerance > 0:
            raise ValueError("max_iterations and gap_tolerance must be positive")


@dataclass
class MSAResult:
    link_flows: np.ndarray
    relative_gap: float
    iterations: int
    total_travel_time: float


def _bellman_ford(network: Network, times, origin: int) -> tuple[dict[int, float], dict[int, int]]:
    dist = {origin: 0.0}
    pred: dict[int, int] = {}
    for _ in range(len(network.nodes)):
        changed = False
        for a, link in enumerate(network.links):
            du = dist.get(link.origin)
            if du is None:
                continue
            nd = du + times[a]
            if nd < dist.get(link.destination, np.inf):
                dist[link.destination] = nd
                pred[link.destination] = a
                changed = True
        if not changed:
            break
    return dist, pred


def all_or_nothing(network: Network, od: ODMatrix, times) -> tuple[np.ndarray, float]:
    """Load every OD demand on its shortest path; returns (link flows, sum of q * shortest time)."""
    y = np.zeros(len(network.links))
    spt = 0.0
    by_origin: dict[int, list[tuple[int, float]]] = {}
    for (r, s), q in sorted(od.entries.items()):
        by_origin.setdefault(r, []).append((s, q))
    for r, dests in by_origin.items():
        dist, pred = _bellman_ford(network, times, r)
        for s, q in dests:
            if s not in dist or s == r:
                raise ValueError(f"node {s} is unreachable from {r}")
            spt += q * dist[s]
            node = s
            while node != r:
                a = pred[node]
                y[a] += q
                node = network.links[a].origin
    return y, spt


def solve_ue_msa(
    network: Network,
    od: ODMatrix,
    solution: Solution,
    params: CostParams,
    config: OracleConfig = OracleConfig(),
) -> MSAResult:
    model = CostModel(network, solution, params)
    x, _ = all_or_nothing(network, od, model.times(np.zeros(len(network.links))))
    gap = np.inf
    n = 1
    while True:
        t = model.times(x)
        y, spt = all_or_nothing(network, od, t)
        tt = float(np.dot(x, t))
        gap = (tt - spt) / tt if tt > 0 else 0.0
        if gap <= config.gap_tolerance or n >= config.max_iterations:
            break
        n += 1
        x = x + (y - x) / n
    return MSAResult(x, gap, n, model.total_travel_time(x))


class PathLimitExceeded(RuntimeError):
    pass


def enumerate_paths(
    network: Network, origin: int, destination: int, max_hops: int | None = None, max_paths: int = 100_000
) -> list[tuple[int, ...]]:
    """Every simple path from origin to destination as a tuple of link indices."""
    if origin == destination:
        return []
    hops = max_hops if max_hops is not None else len(network.nodes)
    out_links: dict[int, list[int]] = {}
    for a, link in enumerate(network.links):
        out_links.setdefault(link.origin, []).append(a)
    found: list[tuple[int, ...]] = []

    def walk(node: int, visited: set[int], links: list[int]) -> None:
        if node == destination:
            found.append(tuple(links))
            if len(found) > max_paths:
                raise PathLimitExceeded(f"more than {max_paths} paths from {origin} to {destination}")
            return
        if len(links) >= hops:
            return
        for a in out_links.get(node, ()):
            nxt = network.links[a].destination
            if nxt in visited:
                continue
            visited.add(nxt)
            links.append(a)
            walk(nxt, visited, links)
            links.pop()
            visited.discard(nxt)

    walk(origin, {origin}, [])
    return found
