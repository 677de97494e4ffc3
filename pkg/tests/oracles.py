"""Brute-force reference implementations used by the tests.

Nothing here imports the routing or insertion code under test; shortest
times come from Floyd-Warshall over the raw link list and insertion
candidates from enumerating every interleaving.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from ftsim.dispatch import Request, VehicleState
from ftsim.network import Link, Node, RoadNetwork


def floyd_warshall(net: RoadNetwork) -> dict[tuple[int, int], float]:
    ids = list(net.node_ids)
    pos = {n: i for i, n in enumerate(ids)}
    n = len(ids)
    d = np.full((n, n), math.inf)
    np.fill_diagonal(d, 0.0)
    for l in net.links:
        d[pos[l.source], pos[l.target]] = min(d[pos[l.source], pos[l.target]], l.travel_time)
    for k in range(n):
        d = np.minimum(d, d[:, [k]] + d[[k], :])
    return {(a, b): float(d[pos[a], pos[b]]) for a in ids for b in ids}


def feasible(tour, capacity, onboard=()) -> bool:
    load = len(onboard)
    seen_pick, seen_drop = set(), set()
    if load > capacity or not tour or tour[-1] != 0 or 0 in tour[:-1]:
        return False
    for s in tour[:-1]:
        if s > 0:
            if s in seen_pick or s in onboard:
                return False
            seen_pick.add(s)
            load += 1
        else:
            if -s in seen_drop or not (-s in seen_pick or -s in onboard):
                return False
            seen_drop.add(-s)
            load -= 1
        if load > capacity:
            return False
    return seen_pick | set(onboard) == seen_drop


def interleavings(tour, r):
    """Every ordering of tour + (r, -r) keeping the old stops in order and r before -r."""
    core = list(tour[:-1])
    n = len(core) + 2
    out = []
    for i, j in itertools.combinations(range(n), 2):
        rest = iter(core)
        cand = [r if k == i else -r if k == j else next(rest) for k in range(n)]
        out.append(tuple(cand) + (0,))
    return out


def cost(times, net, v: VehicleState, tour, now, requests, gamma, kappa):
    if v.next_node is not None:
        node, t = v.next_node, v.arrival_time
    else:
        node, t = v.node, now
    last, sojourn = None, 0.0
    for s in tour[:-1]:
        req = requests[abs(s)]
        nxt = req.origin if s > 0 else req.destination
        t += times[node, nxt]
        node = nxt
        last = t
        if s < 0:
            sojourn += t - req.request_time
    backlog = 0.0 if last is None else last - now
    return gamma * backlog + (1 - gamma) * (kappa * backlog ** 2 + sojourn)


def marginal(times, net, v, cand, req, now, requests, gamma, kappa):
    requests = {**requests, req.id: req}
    return (cost(times, net, v, cand, now, requests, gamma, kappa)
            - cost(times, net, v, v.tour, now, requests, gamma, kappa))


def best_assignment(times, net, fleet, req, now, requests, gamma, kappa, capacity) -> float:
    """Smallest marginal cost over every vehicle and every feasible interleaving."""
    return min(marginal(times, net, v, cand, req, now, requests, gamma, kappa)
               for v in fleet for cand in interleavings(v.tour, req.id)
               if feasible(cand, capacity, tuple(v.onboard)))


def random_network(rng: np.random.Generator, n: int = 10) -> RoadNetwork:
    """Strongly connected random graph: a bidirectional ring plus random chords."""
    links = {}
    for i in range(n):
        j = (i + 1) % n
        t = float(rng.integers(10, 120))
        links[(i, j)] = t
        links[(j, i)] = float(rng.integers(10, 120))
    for _ in range(n):
        a, b = rng.choice(n, 2, replace=False)
        links[(int(a), int(b))] = float(rng.integers(10, 200))
    nodes = [Node(i) for i in range(n)]
    return RoadNetwork(nodes, [Link(a, b, 8.0 * t, t) for (a, b), t in links.items()], depot=0, station=n - 1)


def random_instance(rng: np.random.Generator, capacity: int = 4):
    """Random network, up to 2 vehicles and up to 4 outstanding requests plus a new one."""
    net = random_network(rng)
    n = len(net)
    now = 1000.0
    requests: dict[int, Request] = {}
    n_out = int(rng.integers(0, 5))
    for rid in range(1, n_out + 1):
        o, d = rng.choice(n, 2, replace=False)
        requests[rid] = Request(rid, int(o), int(d), now - float(rng.integers(0, 600)))
    fleet = []
    n_veh = int(rng.integers(1, 3))
    owners = rng.integers(0, n_veh, size=n_out)
    for vid in range(n_veh):
        mine = [r for r, o in zip(requests, owners) if o == vid]
        onboard = {r for r in mine if rng.random() < 0.4}
        tour = [0]
        for r in mine:
            # random order-preserving placement; onboard riders only need a dropoff
            stops = [-r] if r in onboard else [r, -r]
            for _ in range(100):
                cand = list(tour[:-1])
                pos = sorted(rng.integers(0, len(cand) + 1, size=len(stops)))
                for k, (p, s) in enumerate(zip(pos, stops)):
                    cand.insert(p + k, s)
                if feasible(tuple(cand) + (0,), capacity, tuple(onboard & set(map(abs, cand)))):
                    tour = cand + [0]
                    break
            else:
                onboard.discard(r)
        onboard &= {abs(s) for s in tour}
        node = int(rng.integers(0, n))
        v = VehicleState(vid, node, tuple(tour), set(onboard))
        if rng.random() < 0.5:
            nxt = int(rng.choice(net.neighbors(node)))
            tt = net.link(node, nxt).travel_time
            v.next_node = nxt
            v.depart_time = now - tt * float(rng.random())
            v.arrival_time = v.depart_time + tt
        fleet.append(v)
    o, d = rng.choice(n, 2, replace=False)
    new = Request(n_out + 1, int(o), int(d), now)
    return net, fleet, requests, new, now
