from pathlib import Path

import pytest

from netdesign.costs import CostParams
from netdesign.network import Link, ODMatrix, build_network, load_links, load_od

DATA = Path(__file__).resolve().parents[1] / "src" / "netdesign" / "data"
LINKS = DATA / "links.csv"
OD = DATA / "od.csv"

# linear costs t = t0 + (t0 / C) x
LINEAR = CostParams(bpr_alpha=1.0, bpr_beta=1.0)


@pytest.fixture(scope="session")
def reference():
    network = load_links(LINKS, budget=900)
    return network, load_od(OD, network)


@pytest.fixture(scope="session")
def network(reference):
    return reference[0]


@pytest.fixture(scope="session")
def od(reference):
    return reference[1]


def two_link():
    """Parallel links with t1 = 10 + x1, t2 = 20 + x2 and q = 30; UE is x1 = 20, x2 = 10."""
    links = [Link(1, 2, 10.0, 10.0), Link(1, 2, 20.0, 20.0)]
    return build_network(links), ODMatrix({(1, 2): 30.0})


def braess(expandable_bridge: bool = False, bridge_capacity: float = 10.0):
    """Four-node Braess network, q = 6 from 1 to 4.

    Outer links cost 1 + 10x and 50 + x; the bridge 2->3 costs 10 + x at the
    default capacity.
    """
    links = [
        Link(1, 2, 1.0, 0.1),
        Link(1, 3, 50.0, 50.0),
        Link(2, 3, 10.0, bridge_capacity, expandable=expandable_bridge, expansion_amount=1000.0, unit_cost=1.0),
        Link(2, 4, 50.0, 50.0),
        Link(3, 4, 1.0, 0.1),
    ]
    return build_network(links, budget=10.0), ODMatrix({(1, 4): 6.0})


def chain():
    links = [Link(1, 2, 10.0, 100.0), Link(2, 3, 20.0, 100.0)]
    return build_network(links), ODMatrix({(1, 3): 50.0})


# Acceptance lines collected by tests/test_acceptance.py and printed at the end of the run.
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
