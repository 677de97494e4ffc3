from pathlib import Path

import pytest

from ftsim.network import Link, Node, RoadNetwork, load_network

DATA = Path(__file__).parent / "data"

# node ids in the sample network
DEPOT, A, B, C, D, E = 0, 1, 2, 3, 4, 5


def line_network(times, lengths=None, depot=0, station=None):
    """Bidirectional path 0-1-...-n with the given per-link travel times."""
    lengths = lengths or [t * 10 for t in times]
    n = len(times) + 1
    nodes = [Node(i, float(i), 0.0) for i in range(n)]
    links = []
    for i, (t, l) in enumerate(zip(times, lengths)):
        links += [Link(i, i + 1, l, t), Link(i + 1, i, l, t)]
    return RoadNetwork(nodes, links, depot=depot, station=n - 1 if station is None else station)


@pytest.fixture(scope="session")
def sample_net():
    return load_network(DATA / "sample_network.json")


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])
