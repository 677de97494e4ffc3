"""Static road network: shortest travel times, next-hop routing and trip distances.

All-pairs travel times are computed once at construction. Ties between
equal-time paths are broken towards the lowest next node id so that routing
is reproducible.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra


class NetworkError(ValueError):
    """Raised for malformed or invalid network definitions."""


@dataclass(frozen=True)
class Link:
    source: int
    target: int
    length: float  # meters
    travel_time: float  # seconds

    @property
    def speed(self) -> float:
        return self.length / self.travel_time


@dataclass(frozen=True)
class Node:
    id: int
    x: float = 0.0
    y: float = 0.0


class RoadNetwork:
    """Immutable directed road graph with designated depot and station nodes."""

    def __init__(self, nodes: Iterable[Node], links: Iterable[Link], depot: int, station: int):
        nodes = sorted(nodes, key=lambda n: n.id)
        links = list(links)
        if not nodes:
            raise NetworkError("network has no nodes")
        if not links:
            raise NetworkError("network has no links")
        ids = [n.id for n in nodes]
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate node ids")
        index = {nid: i for i, nid in enumerate(ids)}
        for nid, role in ((depot, "depot"), (station, "station")):
            if nid not in index:
                raise NetworkError(f"{role} node {nid} is not in the node set")

        seen = set()
        for link in links:
            if link.source not in index or link.target not in index:
                raise NetworkError(f"link {link.source}->{link.target} references an unknown node")
            if link.source == link.target:
                raise NetworkError(f"self-loop at node {link.source}")
            if not (link.length > 0 and math.isfinite(link.length)):
                raise NetworkError(f"link {link.source}->{link.target} has nonpositive length")
            if not (link.travel_time > 0 and math.isfinite(link.travel_time)):
                raise NetworkError(f"link {link.source}->{link.target} has nonpositive travel time")
            key = (link.source, link.target)
            if key in seen:
                raise NetworkError(f"duplicate link {link.source}->{link.target}")
            seen.add(key)

        n = len(ids)
        rows = [index[l.source] for l in links]
        cols = [index[l.target] for l in links]
        times = csr_matrix(([l.travel_time for l in links], (rows, cols)), shape=(n, n))
        n_comp, _ = connected_components(times, directed=True, connection="strong")
        if n_comp != 1:
            raise NetworkError("network is not strongly connected")

        self._nodes = tuple(nodes)
        self._ids = tuple(ids)
        self._index = index
        self._links = {(l.source, l.target): l for l in links}
        self.depot = depot
        self.station = station

        self._out: list[list[int]] = [[] for _ in range(n)]
        for l in sorted(links, key=lambda l: (l.source, l.target)):
            self._out[index[l.source]].append(index[l.target])

        st = dijkstra(times, directed=True)
        st.setflags(write=False)
        self._time = st
        self._time_rows = st.tolist()
        self._next = self._build_next_hops()
        self._dist = self._build_distances()

    # construction helpers -------------------------------------------------

    def _build_next_hops(self) -> list[list[int]]:
        n = len(self._ids)
        st = self._time
        nxt = np.full((n, n), -1, dtype=np.int64)
        for a in range(n):
            # out-neighbours are sorted by node id, so the first match wins ties
            for b in self._out[a]:
                link = self._links[(self._ids[a], self._ids[b])]
                via = link.travel_time + st[b]
                hit = np.isclose(via, st[a], rtol=1e-12, atol=1e-9) & (nxt[a] < 0)
                nxt[a, hit] = b
            nxt[a, a] = a
        return nxt.tolist()

    def _build_distances(self) -> np.ndarray:
        n = len(self._ids)
        dist = np.zeros((n, n))
        for t in range(n):
            # a node's next hop towards t is strictly closer in time, so
            # visiting nodes by increasing time-to-target resolves dependencies
            for a in np.argsort(self._time[:, t], kind="stable"):
                if a == t:
                    continue
                b = self._next[a][t]
                link = self._links[(self._ids[a], self._ids[b])]
                dist[a, t] = link.length + dist[b, t]
        dist.setflags(write=False)
        return dist

    # accessors ---------------------------------------------------------------

    @property
    def nodes(self) -> tuple[Node, ...]:
        return self._nodes

    @property
    def node_ids(self) -> tuple[int, ...]:
        return self._ids

    @property
    def links(self) -> tuple[Link, ...]:
        return tuple(self._links.values())

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, node: int) -> bool:
        return node in self._index

    def index_of(self, node: int) -> int:
        try:
            return self._index[node]
        except KeyError:
            raise KeyError(f"unknown node {node}") from None

    def link(self, a: int, b: int) -> Link:
        return self._links[(a, b)]

    def neighbors(self, node: int) -> list[int]:
        return [self._ids[j] for j in self._out[self.index_of(node)]]

    # routing -----------------------------------------------------------------

    def shortest_time(self, a: int, b: int) -> float:
        return self._time_rows[self.index_of(a)][self.index_of(b)]

    def next_hop(self, current: int, target: int) -> int:
        if current == target:
            raise ValueError("next_hop requires current != target")
        i, j = self.index_of(current), self.index_of(target)
        return self._ids[self._next[i][j]]

    def trip_distance(self, a: int, b: int) -> float:
        return float(self._dist[self.index_of(a), self.index_of(b)])

    def path(self, a: int, b: int) -> list[int]:
        """Node sequence followed by repeated next-hop moves from a to b."""
        out = [a]
        while out[-1] != b:
            out.append(self.next_hop(out[-1], b))
        return out

    def time_matrix(self) -> np.ndarray:
        return self._time

    # serialization -----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": n.id, "x": n.x, "y": n.y} for n in self._nodes],
            "links": [
                {"from": l.source, "to": l.target, "length_m": l.length, "travel_time_s": l.travel_time}
                for l in self._links.values()
            ],
            "depot": self.depot,
            "station": self.station,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RoadNetwork":
        try:
            nodes = [Node(int(n["id"]), float(n.get("x", 0.0)), float(n.get("y", 0.0))) for n in data["nodes"]]
            links = [
                Link(int(l["from"]), int(l["to"]), float(l["length_m"]), float(l["travel_time_s"]))
                for l in data["links"]
            ]
            depot, station = int(data["depot"]), int(data["station"])
        except (KeyError, TypeError, ValueError) as exc:
            raise NetworkError(f"malformed network definition: {exc}") from exc
        return cls(nodes, links, depot, station)


def load_network(path: str | Path) -> RoadNetwork:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise NetworkError(f"{path}: expected a JSON object")
    return RoadNetwork.from_dict(data)


def generate_grid(
    rows: int,
    cols: int,
    link_length: float,
    speed: float,
    seed: int = 0,
    length_jitter: float = 0.0,
    depot_at: str = "center",
) -> RoadNetwork:
    """Bidirectional rows x cols grid with the station at node 0 (a corner).

    The depot is the center node, or the corner opposite the station when
    ``depot_at="corner"``.

    Node ``r * cols + c`` sits at ``(c * link_length, r * link_length)``.
    ``length_jitter`` scales each undirected segment by a factor drawn from
    ``[1, 1 + length_jitter]`` using ``seed``; with the default of 0 the seed
    has no effect.
    """
    if rows < 2 or cols < 2:
        raise NetworkError("grid needs at least 2 rows and 2 columns")
    if link_length <= 0 or speed <= 0:
        raise NetworkError("link_length and speed must be positive")
    if length_jitter < 0:
        raise NetworkError("length_jitter must be nonnegative")
    rng = np.random.default_rng(seed)
    nodes = [Node(r * cols + c, c * link_length, r * link_length) for r in range(rows) for c in range(cols)]
    links = []
    for r in range(rows):
        for c in range(cols):
            a = r * cols + c
            for b in ((a + 1) if c + 1 < cols else None, (a + cols) if r + 1 < rows else None):
                if b is None:
                    continue
                length = link_length * (1.0 + length_jitter * rng.random()) if length_jitter else link_length
                tt = length / speed
                links.append(Link(a, b, length, tt))
                links.append(Link(b, a, length, tt))
    if depot_at == "center":
        depot = (rows // 2) * cols + cols // 2
    elif depot_at == "corner":
        depot = rows * cols - 1
    else:
        raise NetworkError(f"unknown depot placement {depot_at!r}")
    return RoadNetwork(nodes, links, depot=depot, station=0)
