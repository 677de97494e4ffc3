"""Dynamic dial-a-ride dispatch.

Tours are tuples of signed request ids: ``+r`` picks request ``r`` up, ``-r``
drops it off and a trailing ``0`` sends the vehicle back to the depot, e.g.
``(1, 2, -2, 3, -1, -3, 0)``. Served stops are removed from the front of a
vehicle's tour as it goes.

A new request is inserted into every vehicle's tour at every position pair
that keeps the existing stop order, and the (vehicle, tour) pair with the
smallest marginal cost

    C(v, tour) = gamma * T + (1 - gamma) * (kappa * T**2 + sum_c S_c)

wins. ``T`` is the time until the vehicle finishes its last customer stop and
``S_c`` is request-to-dropoff time for every customer on the tour.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

from .network import RoadNetwork

Tour = tuple[int, ...]
EMPTY_TOUR: Tour = (0,)


@dataclass(frozen=True)
class Request:
    id: int
    origin: int
    destination: int
    request_time: float

    def __post_init__(self):
        if self.id <= 0:
            raise ValueError("request ids must be positive")
        if self.origin == self.destination:
            raise ValueError("request origin and destination must differ")


@dataclass(frozen=True)
class DispatchConfig:
    gamma: float = 0.5
    kappa: float = 0.0
    capacity: int = 4

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if self.capacity < 1:
            raise ValueError("capacity must be at least 1")


@dataclass
class VehicleState:
    """A vehicle either parked at ``node`` or travelling ``node -> next_node``.

    While on a link the vehicle is committed to reaching ``next_node`` at
    ``arrival_time``; tour changes only affect routing from there on.
    """

    id: int
    node: int
    tour: Tour = EMPTY_TOUR
    onboard: set[int] = field(default_factory=set)
    next_node: int | None = None
    depart_time: float = 0.0
    arrival_time: float = 0.0
    odometer: float = 0.0

    @property
    def moving(self) -> bool:
        return self.next_node is not None

    def link_fraction(self, now: float) -> float:
        if not self.moving:
            return 0.0
        span = self.arrival_time - self.depart_time
        return min(1.0, max(0.0, (now - self.depart_time) / span))

    def anchor(self, now: float) -> tuple[int, float]:
        """Earliest (node, time) from which the vehicle can be rerouted."""
        if self.next_node is not None:
            return self.next_node, self.arrival_time
        return self.node, now


@dataclass(frozen=True)
class TourSchedule:
    pickup: dict[int, float]
    dropoff: dict[int, float]
    completion_time: float  # arrival back at the depot
    backlog: float


@dataclass(frozen=True)
class CostBreakdown:
    backlog: float
    sojourns: dict[int, float]
    total: float


class Assignment(NamedTuple):
    vehicle_id: int
    tour: Tour
    cost_delta: float


@dataclass(frozen=True)
class Event:
    time: float
    vehicle_id: int
    kind: str  # assign | pickup | dropoff | arrive_node | idle
    request_id: int
    node: int


def tour_feasible(tour: Sequence[int], capacity: int, onboard: Sequence[int] = ()) -> bool:
    """Precedence, uniqueness, completeness and running-load check.

    ``onboard`` lists requests already in the vehicle; their dropoffs may
    appear without a pickup and they count towards the starting load.
    """
    if not tour or tour[-1] != 0:
        return False
    carried = set(onboard)
    load = len(carried)
    if load > capacity:
        return False
    picked: set[int] = set()
    dropped: set[int] = set()
    for stop in tour[:-1]:
        if stop > 0:
            if stop in picked or stop in carried:
                return False
            picked.add(stop)
            load += 1
            if load > capacity:
                return False
        elif stop < 0:
            r = -stop
            if r in dropped or (r not in picked and r not in carried):
                return False
            dropped.add(r)
            load -= 1
        else:
            return False
    return picked <= dropped and carried <= dropped


def _stop_node(stop: int, requests: Mapping[int, Request], depot: int) -> int:
    if stop > 0:
        return requests[stop].origin
    if stop < 0:
        return requests[-stop].destination
    return depot


def simulate_tour(
    net: RoadNetwork,
    v: VehicleState,
    tour: Sequence[int],
    now: float,
    requests: Mapping[int, Request],
) -> TourSchedule:
    if not tour_feasible(tour, len(v.onboard) + len(tour), v.onboard):
        raise ValueError(f"infeasible tour {tuple(tour)} for vehicle {v.id}")
    node, t = v.anchor(now)
    pickup: dict[int, float] = {}
    dropoff: dict[int, float] = {}
    last_customer = None
    for stop in tour:
        nxt = _stop_node(stop, requests, net.depot)
        t += net.shortest_time(node, nxt)
        node = nxt
        if stop > 0:
            pickup[stop] = t
            last_customer = t
        elif stop < 0:
            dropoff[-stop] = t
            last_customer = t
    backlog = 0.0 if last_customer is None else last_customer - now
    return TourSchedule(pickup, dropoff, t, backlog)


def combine_cost(backlog: float, sojourn_sum: float, cfg: DispatchConfig) -> float:
    return cfg.gamma * backlog + (1.0 - cfg.gamma) * (cfg.kappa * backlog * backlog + sojourn_sum)


def tour_cost(
    net: RoadNetwork,
    v: VehicleState,
    tour: Sequence[int],
    now: float,
    cfg: DispatchConfig,
    requests: Mapping[int, Request],
) -> CostBreakdown:
    if not tour_feasible(tour, cfg.capacity, v.onboard):
        raise ValueError(f"infeasible tour {tuple(tour)} at capacity {cfg.capacity}")
    for stop in tour:
        if stop and abs(stop) not in requests:
            raise KeyError(f"request {abs(stop)} missing from the request table")
    sched = simulate_tour(net, v, tour, now, requests)
    sojourns = {r: t - requests[r].request_time for r, t in sched.dropoff.items()}
    total = combine_cost(sched.backlog, sum(sojourns.values()), cfg)
    return CostBreakdown(sched.backlog, sojourns, total)


def candidate_insertions(
    tour: Sequence[int], req: Request, capacity: int, onboard: Sequence[int] = ()
) -> list[Tour]:
    """Order-preserving pickup/dropoff insertions, ordered by (pickup gap, dropoff gap)."""
    r = req.id
    if r in tour or -r in tour:
        raise ValueError(f"request {r} is already in the tour")
    core = tuple(tour[:-1])
    out = []
    for i in range(len(core) + 1):
        head, rest = core[:i], core[i:]
        for j in range(len(rest) + 1):
            cand = head + (r,) + rest[:j] + (-r,) + rest[j:] + (0,)
            if tour_feasible(cand, capacity, onboard):
                out.append(cand)
    return out


class _FastCost:
    """Tour cost evaluation on raw index arrays; avoids per-call validation."""

    def __init__(self, net: RoadNetwork, cfg: DispatchConfig, requests: Mapping[int, Request]):
        self.rows = net._time_rows
        self.index_of = net.index_of
        self.depot_idx = net.index_of(net.depot)
        self.cfg = cfg
        self.requests = requests
        self._node_idx: dict[int, int] = {}
        self._req_time: dict[int, float] = {}

    def stop_index(self, stop: int) -> int:
        idx = self._node_idx.get(stop)
        if idx is None:
            if stop == 0:
                idx = self.depot_idx
            else:
                req = self.requests[abs(stop)]
                idx = self.index_of(req.origin if stop > 0 else req.destination)
                self._req_time[abs(stop)] = req.request_time
            self._node_idx[stop] = idx
        return idx

    def cost(self, anchor_idx: int, anchor_time: float, tour: Tour, now: float) -> float:
        rows = self.rows
        node, t = anchor_idx, anchor_time
        last = None
        sojourn = 0.0
        for stop in tour:
            if stop == 0:
                break
            nxt = self.stop_index(stop)
            t += rows[node][nxt]
            node = nxt
            last = t
            if stop < 0:
                sojourn += t - self._req_time[-stop]
        backlog = 0.0 if last is None else last - now
        return combine_cost(backlog, sojourn, self.cfg)


def assign(
    fleet: Sequence[VehicleState],
    req: Request,
    now: float,
    cfg: DispatchConfig,
    net: RoadNetwork,
    requests: Mapping[int, Request],
) -> Assignment:
    """Pick the vehicle and insertion with the smallest increase in tour cost.

    Every request is placed; ties go to the lowest vehicle id and then the
    earliest insertion positions.
    """
    if not fleet:
        raise ValueError("cannot assign a request with an empty fleet")
    if req.id not in requests:
        requests = {**requests, req.id: req}
    fast = _FastCost(net, cfg, requests)
    best: Assignment | None = None
    for v in sorted(fleet, key=lambda v: v.id):
        node, t0 = v.anchor(now)
        a = net.index_of(node)
        base = fast.cost(a, t0, v.tour, now)
        for cand in candidate_insertions(v.tour, req, cfg.capacity, tuple(v.onboard)):
            delta = fast.cost(a, t0, cand, now) - base
            if best is None or delta < best.cost_delta:
                best = Assignment(v.id, cand, delta)
    if best is None:
        raise RuntimeError(f"no feasible insertion for request {req.id}")
    return best


def complete_link(net: RoadNetwork, v: VehicleState) -> None:
    """Move a travelling vehicle onto the node at the end of its current link."""
    if v.next_node is None:
        return
    v.odometer += net.link(v.node, v.next_node).length
    v.node = v.next_node
    v.next_node = None


def on_node_arrival(
    net: RoadNetwork,
    v: VehicleState,
    now: float,
    requests: Mapping[int, Request],
) -> list[Event]:
    """Serve the stops due at the vehicle's node, then commit to the next link.

    The vehicle must be at a node (call :func:`complete_link` first). Only
    the next intersection is fixed; the rest of the path is re-derived on
    every arrival, so tour changes made while on a link take effect here.
    """
    if v.next_node is not None:
        raise ValueError(f"vehicle {v.id} is still on a link")
    here = v.node
    events = [Event(now, v.id, "arrive_node", 0, here)]
    tour = v.tour
    k = 0
    while tour[k] != 0 and _stop_node(tour[k], requests, net.depot) == here:
        stop = tour[k]
        if stop > 0:
            v.onboard.add(stop)
            events.append(Event(now, v.id, "pickup", stop, here))
        else:
            v.onboard.discard(-stop)
            events.append(Event(now, v.id, "dropoff", -stop, here))
        k += 1
    v.tour = tour = tour[k:]

    target = _stop_node(tour[0], requests, net.depot)
    if target == here:
        # only the depot stop remains and we are at the depot
        events.append(Event(now, v.id, "idle", 0, here))
        return events
    nxt = net.next_hop(here, target)
    v.next_node = nxt
    v.depart_time = now
    v.arrival_time = now + net.link(here, nxt).travel_time
    return events
