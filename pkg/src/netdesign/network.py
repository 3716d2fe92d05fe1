"""Network, demand and decision-vector data model plus instance file I/O.

Link files are comma-delimited with one header row; the OD file is a matrix
whose first column holds origins and whose header row holds destinations,
with ``-`` or an empty cell meaning no demand.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence


class InstanceError(ValueError):
    """Raised when an instance file cannot be turned into a network."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


LINK_COLUMNS = (
    "origin",
    "destination",
    "free_travel_time",
    "capacity",
    "link_division_condition",
    "cycle_length",
    "green_ratio",
    "same_phase_node",
    "capacity_expansion_condition",
    "capacity_expansion",
    "unit_cost",
    "x_kink",
)
# green_ratio and x_kink are informative columns; everything else is required
REQUIRED_LINK_COLUMNS = tuple(c for c in LINK_COLUMNS if c not in ("green_ratio", "x_kink"))


@dataclass(frozen=True)
class Node:
    id: int
    is_signalized: bool = False


@dataclass(frozen=True)
class Link:
    origin: int
    destination: int
    free_time: float
    base_capacity: float
    enters_signal: bool = False
    cycle_length: float = 0.0
    same_phase_node: int | None = None
    expandable: bool = False
    expansion_amount: float = 0.0
    unit_cost: float = 0.0
    # printed reference columns, kept for round-tripping only
    green_ratio: float = 0.0
    x_kink_printed: float = 0.0

    @property
    def label(self) -> str:
        return f"{self.origin}-{self.destination}"


@dataclass(frozen=True)
class SignalIntersection:
    node: int
    cycle_length: float
    phase_a_links: tuple[int, ...]
    phase_b_links: tuple[int, ...]

    @property
    def approaches(self) -> tuple[int, ...]:
        return tuple(sorted(self.phase_a_links + self.phase_b_links))


@dataclass(frozen=True)
class ODMatrix:
    entries: dict[tuple[int, int], float]

    def pairs(self) -> list[tuple[int, int]]:
        return sorted(self.entries)

    @property
    def total_demand(self) -> float:
        return float(sum(self.entries.values()))

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class Network:
    nodes: tuple[Node, ...]
    links: tuple[Link, ...]
    signals: tuple[SignalIntersection, ...]
    budget: float = 0.0

    @property
    def node_ids(self) -> list[int]:
        return [n.id for n in self.nodes]

    def link_index(self, origin: int, destination: int) -> int:
        for i, link in enumerate(self.links):
            if link.origin == origin and link.destination == destination:
                return i
        raise KeyError(f"no link {origin}->{destination}")

    def with_budget(self, budget: float) -> Network:
        return replace(self, budget=float(budget))

    def without_links(self, indices: Iterable[int]) -> Network:
        """Copy of the network with some links removed and signals re-derived."""
        drop = set(indices)
        kept = tuple(l for i, l in enumerate(self.links) if i not in drop)
        return build_network(kept, budget=self.budget, extra_nodes=self.node_ids)

    @property
    def total_expansion_cost(self) -> float:
        return float(sum(l.unit_cost for l in self.links if l.expandable))

    def signal_of_link(self) -> dict[int, tuple[int, bool]]:
        """Map approach link index -> (signal position, member of phase A)."""
        out = {}
        for j, sig in enumerate(self.signals):
            for i in sig.phase_a_links:
                out[i] = (j, True)
            for i in sig.phase_b_links:
                out[i] = (j, False)
        return out

    def adjacency(self) -> dict[int, list[tuple[int, int]]]:
        adj: dict[int, list[tuple[int, int]]] = {n: [] for n in self.node_ids}
        for i, l in enumerate(self.links):
            adj.setdefault(l.origin, []).append((l.destination, i))
        return adj


@dataclass(frozen=True)
class Solution:
    """Decision vector.

    ``expand`` holds one flag per link in network order (non-expandable links
    must stay ``False``); ``green_split`` holds the phase-A green ratio of each
    signal in network order, phase B receiving the complement.
    """

    expand: tuple[bool, ...]
    green_split: tuple[float, ...]

    @classmethod
    def initial(cls, network: Network, split: float = 0.5) -> Solution:
        return cls((False,) * len(network.links), (split,) * len(network.signals))

    def with_expand(self, index: int, value: bool) -> Solution:
        flags = list(self.expand)
        flags[index] = value
        return Solution(tuple(flags), self.green_split)

    def with_split(self, index: int, value: float) -> Solution:
        splits = list(self.green_split)
        splits[index] = value
        return Solution(self.expand, tuple(splits))

    def expanded_links(self) -> list[int]:
        return [i for i, flag in enumerate(self.expand) if flag]

    def phase_ratios(self, signal_index: int) -> tuple[float, float]:
        g = self.green_split[signal_index]
        return g, 1.0 - g

    def changed_components(self, other: Solution) -> int:
        n = sum(a != b for a, b in zip(self.expand, other.expand))
        return n + sum(a != b for a, b in zip(self.green_split, other.green_split))


@dataclass
class Violation:
    kind: str
    message: str
    line: int | None = None

    def __str__(self) -> str:
        prefix = f"line {self.line}: " if self.line is not None else ""
        return f"[{self.kind}] {prefix}{self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    def add(self, kind: str, message: str, line: int | None = None) -> None:
        self.violations.append(Violation(kind, message, line))

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def __len__(self) -> int:
        return len(self.violations)


def effective_capacity(network: Network, index: int, solution: Solution) -> float:
    link = network.links[index]
    if solution.expand[index]:
        if not link.expandable:
            raise ValueError(f"link {link.label} is not a capacity expansion candidate")
        return link.base_capacity + link.expansion_amount
    return link.base_capacity


def solution_cost(network: Network, solution: Solution) -> float:
    return float(sum(network.links[i].unit_cost for i in solution.expanded_links()))


# ---------------------------------------------------------------------------
# construction


def _phase_groups(links: Sequence[Link], members: list[int], node: int) -> list[list[int]]:
    """Group approach links into phases by mutual same-phase references."""
    by_origin = {links[i].origin: i for i in members}
    parent = {i: i for i in members}

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in members:
        ref = links[i].same_phase_node
        if ref is None or ref not in by_origin:
            raise InstanceError(
                f"dangling phase reference: link {links[i].label} names same-phase node "
                f"{ref}, but no signalized approach {ref}->{node} exists"
            )
        j = by_origin[ref]
        if links[j].same_phase_node != links[i].origin:
            raise InstanceError(
                f"non-mutual phase reference at node {node}: {links[i].label} names "
                f"{ref}, but {links[j].label} names {links[j].same_phase_node}"
            )
        parent[find(i)] = find(j)

    groups: dict[int, list[int]] = defaultdict(list)
    for i in members:
        groups[find(i)].append(i)
    return sorted((sorted(g) for g in groups.values()), key=lambda g: links[g[0]].origin)


def derive_signals(links: Sequence[Link]) -> tuple[SignalIntersection, ...]:
    approaches: dict[int, list[int]] = defaultdict(list)
    for i, link in enumerate(links):
        if link.enters_signal:
            approaches[link.destination].append(i)
    signals = []
    for node in sorted(approaches):
        members = approaches[node]
        cycles = {links[i].cycle_length for i in members}
        if len(cycles) != 1:
            raise InstanceError(f"inconsistent cycle lengths {sorted(cycles)} at signalized node {node}")
        groups = _phase_groups(links, members, node)
        if len(groups) != 2:
            raise InstanceError(
                f"signalized node {node} has {len(groups)} phase groups; exactly two are supported"
            )
        signals.append(SignalIntersection(node, cycles.pop(), tuple(groups[0]), tuple(groups[1])))
    return tuple(signals)


def build_network(
    links: Sequence[Link], budget: float = 0.0, extra_nodes: Iterable[int] = ()
) -> Network:
    links = tuple(links)
    signals = derive_signals(links)
    signalized = {s.node for s in signals}
    ids = set(extra_nodes)
    for l in links:
        ids.update((l.origin, l.destination))
    nodes = tuple(Node(i, i in signalized) for i in sorted(ids))
    return Network(nodes, links, signals, float(budget))


# ---------------------------------------------------------------------------
# file I/O


def _number(raw: str, column: str, line: int, path: str | None) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise InstanceError(f"non-numeric value {raw!r} in column {column!r}", line, path) from None


def _node_id(raw: str, column: str, line: int, path: str | None) -> int:
    value = _number(raw, column, line, path)
    if value != int(value):
        raise InstanceError(f"node id {raw!r} in column {column!r} is not an integer", line, path)
    return int(value)


def parse_links(text: str, path: str | None = None) -> list[Link]:
    reader = csv.reader(io.StringIO(text))
    rows = [(n, r) for n, r in enumerate(reader, start=1) if any(c.strip() for c in r)]
    if not rows:
        raise InstanceError("empty link file", None, path)
    header_line, header = rows[0]
    header = [h.strip() for h in header]
    dupes = sorted({h for h in header if header.count(h) > 1})
    if dupes:
        raise InstanceError(f"duplicate columns {dupes}", header_line, path)
    missing = [c for c in REQUIRED_LINK_COLUMNS if c not in header]
    if missing:
        raise InstanceError(f"missing columns {missing}", header_line, path)
    col = {h: k for k, h in enumerate(header)}

    links = []
    seen: dict[tuple[int, int], int] = {}
    for line, row in rows[1:]:
        if len(row) != len(header):
            raise InstanceError(
                f"expected {len(header)} fields, found {len(row)} (truncated record?)", line, path
            )

        def get(name: str) -> str:
            return row[col[name]].strip()

        origin = _node_id(get("origin"), "origin", line, path)
        dest = _node_id(get("destination"), "destination", line, path)
        free_time = _number(get("free_travel_time"), "free_travel_time", line, path)
        capacity = _number(get("capacity"), "capacity", line, path)
        if free_time < 0 or capacity < 0:
            raise InstanceError("negative free travel time or capacity", line, path)
        division = _number(get("link_division_condition"), "link_division_condition", line, path)
        if division not in (1.0, -1.0):
            raise InstanceError(f"link_division_condition must be 1 or -1, got {division:g}", line, path)
        cycle = _number(get("cycle_length"), "cycle_length", line, path)
        phase_node = _node_id(get("same_phase_node"), "same_phase_node", line, path)
        condition = _number(get("capacity_expansion_condition"), "capacity_expansion_condition", line, path)
        amount = _number(get("capacity_expansion"), "capacity_expansion", line, path)
        cost = _number(get("unit_cost"), "unit_cost", line, path)
        if cycle < 0 or amount < 0 or cost < 0:
            raise InstanceError("negative cycle length, expansion amount or unit cost", line, path)
        green = _number(get("green_ratio"), "green_ratio", line, path) if "green_ratio" in col else 0.0
        kink = _number(get("x_kink"), "x_kink", line, path) if "x_kink" in col else 0.0
        if (origin, dest) in seen:
            raise InstanceError(f"duplicate link {origin}->{dest} (first on line {seen[origin, dest]})", line, path)
        seen[origin, dest] = line
        enters = division == 1.0
        links.append(
            Link(
                origin=origin,
                destination=dest,
                free_time=free_time,
                base_capacity=capacity,
                enters_signal=enters,
                cycle_length=cycle if enters else 0.0,
                same_phase_node=phase_node if enters and phase_node != 0 else None,
                expandable=condition == 1.0,
                expansion_amount=amount,
                unit_cost=cost,
                green_ratio=green,
                x_kink_printed=kink,
            )
        )
    return links


def load_links(path: str | Path, budget: float = 0.0) -> Network:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InstanceError(f"cannot read link file: {exc.strerror}", None, str(path)) from exc
    links = parse_links(text, str(path))
    try:
        return build_network(links, budget)
    except InstanceError as exc:
        raise InstanceError(str(exc), None, str(path)) from None


def parse_od(text: str, path: str | None = None) -> ODMatrix:
    reader = csv.reader(io.StringIO(text))
    rows = [(n, r) for n, r in enumerate(reader, start=1) if any(c.strip() for c in r)]
    if len(rows) < 2:
        raise InstanceError("OD matrix has no origin rows", None, path)
    header_line, header = rows[0]
    dests = [_node_id(h.strip(), "destination header", header_line, path) for h in header[1:]]
    if len(set(dests)) != len(dests):
        raise InstanceError("duplicate destination columns", header_line, path)
    entries: dict[tuple[int, int], float] = {}
    origins_seen = set()
    for line, row in rows[1:]:
        if len(row) != len(header):
            raise InstanceError(f"expected {len(header)} fields, found {len(row)}", line, path)
        origin = _node_id(row[0].strip(), "origin", line, path)
        if origin in origins_seen:
            raise InstanceError(f"duplicate origin row {origin}", line, path)
        origins_seen.add(origin)
        for dest, raw in zip(dests, row[1:]):
            raw = raw.strip()
            if raw in ("", "-"):
                continue
            value = _number(raw, f"demand {origin}->{dest}", line, path)
            if value < 0:
                raise InstanceError(f"negative demand {origin}->{dest}", line, path)
            if value > 0:
                entries[origin, dest] = value
    if not entries:
        raise InstanceError("OD matrix contains no positive demand", None, path)
    return ODMatrix(entries)


def load_od(path: str | Path, network: Network | None = None) -> ODMatrix:
    """Read an OD matrix; with ``network`` given, unknown node ids are rejected."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InstanceError(f"cannot read OD file: {exc.strerror}", None, str(path)) from exc
    od = parse_od(text, str(path))
    if network is not None:
        known = set(network.node_ids)
        for r, s in od.pairs():
            if r not in known or s not in known:
                raise InstanceError(f"demand {r}->{s} references an unknown node", None, str(path))
    return od


def _fmt(value: float) -> str:
    return repr(int(value)) if float(value).is_integer() else repr(float(value))


def dump_links(network: Network) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(LINK_COLUMNS)
    for l in network.links:
        writer.writerow(
            [
                l.origin,
                l.destination,
                _fmt(l.free_time),
                _fmt(l.base_capacity),
                1 if l.enters_signal else -1,
                _fmt(l.cycle_length),
                _fmt(l.green_ratio),
                l.same_phase_node or 0,
                1 if l.expandable else 0,
                _fmt(l.expansion_amount),
                _fmt(l.unit_cost),
                _fmt(l.x_kink_printed),
            ]
        )
    return out.getvalue()


def dump_od(od: ODMatrix) -> str:
    origins = sorted({r for r, _ in od.entries})
    dests = sorted({s for _, s in od.entries})
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["origin", *dests])
    for r in origins:
        writer.writerow([r, *(_fmt(od.entries[r, s]) if (r, s) in od.entries else "-" for s in dests)])
    return out.getvalue()


# ---------------------------------------------------------------------------
# validation


def reachable(network: Network, origin: int) -> set[int]:
    adj = network.adjacency()
    seen = {origin}
    queue = deque([origin])
    while queue:
        u = queue.popleft()
        for v, _ in adj.get(u, ()):
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def validate(
    network: Network,
    od: ODMatrix | None = None,
    solution: Solution | None = None,
    split_bounds: tuple[float, float] = (0.2, 0.8),
) -> ValidationReport:
    """Collect every invariant violation; an empty report means the instance is runnable."""
    report = ValidationReport()
    ids = [n.id for n in network.nodes]
    known = set(ids)
    if len(known) != len(ids):
        report.add("node", "duplicate node ids")
    if network.budget < 0:
        report.add("budget", f"negative budget {network.budget:g}")

    for i, l in enumerate(network.links):
        tag = f"link {l.label}"
        if l.origin not in known or l.destination not in known:
            report.add("link", f"{tag} references an unknown node")
        if l.origin == l.destination:
            report.add("link", f"{tag} is a self-loop")
        if not l.free_time > 0:
            report.add("link", f"{tag} has non-positive free time")
        if not l.base_capacity > 0:
            report.add("link", f"{tag} has non-positive capacity")
        if l.enters_signal and not l.cycle_length > 0:
            report.add("signal", f"{tag} enters a signal but has no cycle length")
        if l.expandable and not (l.expansion_amount > 0 and l.unit_cost > 0):
            report.add("expansion", f"{tag} is expandable without a positive amount and cost")

    signal_nodes = {s.node for s in network.signals}
    approach_sets: dict[int, set[int]] = defaultdict(set)
    for i, l in enumerate(network.links):
        if l.enters_signal:
            approach_sets[l.destination].add(i)
    for node in approach_sets:
        if node not in signal_nodes:
            report.add("signal", f"signalized node {node} has no intersection record")
    for n in network.nodes:
        if n.is_signalized and n.id not in signal_nodes:
            report.add("signal", f"signalized node {n.id} has no intersection record")
    counts: dict[int, int] = defaultdict(int)
    for s in network.signals:
        counts[s.node] += 1
    for node, c in counts.items():
        if c > 1:
            report.add("signal", f"node {node} has {c} intersection records")
    for s in network.signals:
        a, b = set(s.phase_a_links), set(s.phase_b_links)
        if not a or not b:
            report.add("phase", f"node {s.node} has an empty phase")
        if a & b:
            report.add("phase", f"node {s.node} has a link in both phases")
        if a | b != approach_sets.get(s.node, set()):
            report.add("phase", f"node {s.node} phases do not cover exactly its signalized approaches")
        for i in a | b:
            if i >= len(network.links):
                continue
            if network.links[i].cycle_length != s.cycle_length:
                report.add("signal", f"node {s.node}: link {network.links[i].label} cycle differs")
        for group in (a, b):
            origins = {network.links[i].origin for i in group if i < len(network.links)}
            for i in group:
                if i < len(network.links) and network.links[i].same_phase_node not in origins:
                    report.add(
                        "phase",
                        f"node {s.node}: link {network.links[i].label} names same-phase node "
                        f"{network.links[i].same_phase_node} outside its phase",
                    )

    if od is not None:
        if not od.entries:
            report.add("od", "OD matrix is empty")
        reach_cache: dict[int, set[int]] = {}
        for (r, s), q in sorted(od.entries.items()):
            if not q > 0:
                report.add("od", f"demand {r}->{s} is not positive")
            if r not in known or s not in known:
                report.add("od", f"demand {r}->{s} references an unknown node")
                continue
            if r == s:
                report.add("od", f"demand {r}->{s} is an intra-zonal trip")
                continue
            if r not in reach_cache:
                reach_cache[r] = reachable(network, r)
            if s not in reach_cache[r]:
                report.add("reachability", f"destination {s} is unreachable from {r}")

    if solution is not None:
        lo, hi = split_bounds
        if len(solution.expand) != len(network.links):
            report.add("solution", "expansion vector length differs from link count")
        if len(solution.green_split) != len(network.signals):
            report.add("solution", "green split vector length differs from signal count")
        for i, flag in enumerate(solution.expand):
            if flag and i < len(network.links) and not network.links[i].expandable:
                report.add("solution", f"link {network.links[i].label} expanded but not a candidate")
        for sig, g in zip(network.signals, solution.green_split):
            if not lo - 1e-12 <= g <= hi + 1e-12:
                report.add("bounds", f"node {sig.node} green split {g:g} outside [{lo:g}, {hi:g}]")
        cost = solution_cost(network, solution)
        if cost > network.budget + 1e-9:
            report.add("budget", f"expansion cost {cost:g} exceeds budget {network.budget:g}")
    return report
