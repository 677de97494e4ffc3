"""Within-day event simulation and the day-to-day adjustment loop."""
from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from . import demand
from .demand import COST, IVT, WAIT, Mode, ModeParams, Population, UtilityCoefficients
from .dispatch import (
    DispatchConfig,
    Event,
    Request,
    VehicleState,
    assign,
    complete_link,
    on_node_arrival,
)
from .network import RoadNetwork, generate_grid
from .supply import (
    CostModel,
    DriverAgent,
    FareSchedule,
    FleetKind,
    OperatorPolicy,
    av_fleet_size,
    hdv_update,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Scenario:
    label: str
    fleet_kind: FleetKind = FleetKind.AV
    max_fleet: int = 10
    capacity: int = 4
    profit_threshold: float = 25.0
    base_fare: float = 4.25
    increment_fare: float = 0.25
    increment_distance: float = 130.0
    discount_pct: float = 0.0
    operating_cost: float = 0.51
    gamma: float = 0.5
    kappa: float = 0.0
    days: int = 10
    seed: int = 0
    replications: int = 1
    commission_rate: float = 0.2
    owned: bool = True
    min_fleet: int = 1
    initial_fleet: int = 3
    traveler_learning: float = 0.3
    driver_learning: float = 0.3
    driver_pool: int | None = None
    initial_driver_profit: float = 30.0
    eq_window: int = 10

    def __post_init__(self):
        object.__setattr__(self, "fleet_kind", FleetKind(self.fleet_kind))
        if self.days < 0:
            raise ValueError("days must be nonnegative")
        if not 0 < self.traveler_learning <= 1 or not 0 < self.driver_learning <= 1:
            raise ValueError("learning weights must lie in (0, 1]")
        if not 0 <= self.initial_fleet:
            raise ValueError("initial_fleet must be nonnegative")
        # validates the derived objects eagerly
        self.policy, self.fares, self.dispatch_config

    @property
    def shared(self) -> bool:
        return self.capacity > 1

    @cached_property
    def fares(self) -> FareSchedule:
        return FareSchedule(self.base_fare, self.increment_fare, self.increment_distance, self.discount_pct)

    @cached_property
    def base_fares(self) -> FareSchedule:
        return replace(self.fares, discount_pct=0.0)

    @cached_property
    def policy(self) -> OperatorPolicy:
        return OperatorPolicy(self.fleet_kind, self.max_fleet, self.capacity, self.profit_threshold,
                              self.commission_rate, self.owned, min(self.min_fleet, self.max_fleet))

    @cached_property
    def cost_model(self) -> CostModel:
        return CostModel(self.operating_cost)

    @cached_property
    def dispatch_config(self) -> DispatchConfig:
        return DispatchConfig(self.gamma, self.kappa, self.capacity)


@dataclass(frozen=True)
class World:
    """Network, population and the day-0 calibrated choice model shared by scenarios."""

    net: RoadNetwork
    population: Population
    coef: UtilityCoefficients

    @classmethod
    def build(cls, net: RoadNetwork, population: Population,
              coef: UtilityCoefficients | None = None, calibrate: bool = True,
              base_fares: FareSchedule | None = None) -> "World":
        coef = coef or UtilityCoefficients()
        if calibrate:
            los = population.initial_los(base_fares or FareSchedule())
            coef = demand.calibrate_asc(los, coef)
        return cls(net, population, coef)


def default_world(travelers: int = 2000, seed: int = 2024) -> World:
    net = generate_grid(**DEFAULT_GRID)
    return World.build(net, Population.synthesize(net, travelers, seed))


DEFAULT_GRID = dict(rows=9, cols=9, link_length=250.0, speed=8.0, seed=0, depot_at="corner")


@dataclass
class DayMetrics:
    day: int
    ridership: int
    mean_wait: float  # seconds; 0 when nobody rode
    fleet_size: int
    total_profit: float
    consumer_surplus: float
    shares: tuple[float, ...]
    fts_choosers: int = 0
    revenue_cents: int = 0
    traveler_spend_cents: int = 0
    distance_m: float = 0.0
    operating_cost: float = 0.0
    commission: float = 0.0

    @property
    def wait_count(self) -> int:
        return self.ridership

    @property
    def mean_wait_min(self) -> float:
        return self.mean_wait / 60.0

    @property
    def revenue(self) -> float:
        return self.revenue_cents / 100


@dataclass
class RunResult:
    label: str
    replication: int
    days: list[DayMetrics]
    converged: bool = False
    convergence_day: int | None = None
    events: list[tuple[int, Event]] | None = None

    def tail(self, window: int) -> list[DayMetrics]:
        return self.days[-window:] if window else self.days

    def equilibrium(self, window: int = 10) -> dict[str, float]:
        tail = self.tail(window)
        riders = sum(d.ridership for d in tail)
        wait = sum(d.mean_wait * d.ridership for d in tail) / riders if riders else math.nan
        fleet = np.array([d.fleet_size for d in tail], dtype=float)
        return {
            "ridership": float(np.mean([d.ridership for d in tail])),
            "mean_wait_s": wait,
            "fleet_size": float(fleet.mean()),
            "final_fleet": float(tail[-1].fleet_size),
            "fleet_var": float(fleet.var()),
            "profit": float(np.mean([d.total_profit for d in tail])),
            "consumer_surplus": float(np.mean([d.consumer_surplus for d in tail])),
        }


@dataclass
class DayOutcome:
    metrics: DayMetrics
    experienced: np.ndarray  # (n, 3) wait/ivt/cost of each traveller's realized mode
    realized_modes: np.ndarray
    driver_profits: dict[int, float]
    events: list[Event]
    fallback: np.ndarray  # travellers who picked FTS on a day without service


@dataclass
class SimulationState:
    scenario: Scenario
    world: World
    replication: int
    day: int
    los: np.ndarray
    fleet_size: int
    drivers: list[DriverAgent] = field(default_factory=list)
    choices: np.ndarray | None = None
    utilities: np.ndarray | None = None

    @property
    def vehicle_ids(self) -> list[int]:
        if self.scenario.fleet_kind is FleetKind.HDV:
            return [d.id for d in self.drivers if d.active]
        return list(range(self.fleet_size))


def day_rng(scenario: Scenario, replication: int, day: int) -> np.random.Generator:
    # keyed on replication and day only, so scenarios share draws (paired comparisons)
    return np.random.default_rng([scenario.seed, replication, day])


def draw_choices(state: SimulationState) -> None:
    sc, world = state.scenario, state.world
    v = demand.utilities(state.los, world.coef)
    if state.fleet_size == 0:
        v[:, Mode.FTS] = -np.inf
    probs = demand.choice_probabilities(v, world.coef.scale)
    u = day_rng(sc, state.replication, state.day).random(len(world.population))
    state.utilities = v
    state.choices = demand.sample_modes(probs, u)


def initial_state(sc: Scenario, world: World, replication: int = 0) -> SimulationState:
    los = world.population.initial_los(sc.base_fares)
    policy = sc.policy
    if sc.fleet_kind is FleetKind.AV:
        fleet = min(policy.max_fleet, max(policy.min_fleet, sc.initial_fleet))
        drivers = []
    else:
        pool = sc.driver_pool or sc.max_fleet
        fleet = min(sc.initial_fleet, pool, sc.max_fleet)
        low = sc.profit_threshold - (sc.initial_driver_profit - sc.profit_threshold)
        drivers = [DriverAgent(i, sc.initial_driver_profit if i < fleet else low, i < fleet, sc.driver_learning)
                   for i in range(pool)]
    state = SimulationState(sc, world, replication, 0, los, fleet, drivers)
    draw_choices(state)
    return state


_ARRIVAL, _REQUEST = 0, 1


def run_day(state: SimulationState, day: int | None = None, record_events: bool = False) -> DayOutcome:
    """Simulate one morning: requests at departure times, node-by-node vehicle moves.

    Every FTS request is served, even if the last dropoff falls after the
    study window; the day ends when all vehicles are idle at the depot.
    """
    if day is not None:
        state.day = day
    sc, world = state.scenario, state.world
    net, pop = world.net, world.population
    n = len(pop)
    modes = state.choices.copy()
    experienced = pop.static_los[np.arange(n), modes].copy()
    fallback = np.zeros(n, dtype=bool)

    fts_idx = np.flatnonzero(modes == Mode.FTS)
    vehicle_ids = state.vehicle_ids
    if len(fts_idx) and not vehicle_ids:
        fallback[fts_idx] = True
        modes[fts_idx] = Mode.AUTO
        experienced[fts_idx] = pop.static_los[fts_idx, Mode.AUTO]
        fts_idx = fts_idx[:0]

    fare_cents = pop.fares_cents(sc.fares, sc.shared) if len(fts_idx) else None
    cfg = sc.dispatch_config
    fleet = {vid: VehicleState(vid, net.depot) for vid in vehicle_ids}
    fleet_list = list(fleet.values())
    requests: dict[int, Request] = {}
    pending: set[int] = set()
    revenue_cents = {vid: 0 for vid in vehicle_ids}
    pickup_time: dict[int, float] = {}
    waits: list[float] = []
    events: list[Event] = []

    heap: list[tuple[float, int, int, int]] = []
    seq = 0
    order = sorted(fts_idx, key=lambda i: (pop.departure[i], i))
    for i in order:
        heapq.heappush(heap, (float(pop.departure[i]), _REQUEST, seq, int(i)))
        seq += 1

    clock = -math.inf
    while heap:
        t, kind, _, key = heapq.heappop(heap)
        if t < clock:
            raise RuntimeError("event queue went back in time")
        clock = t
        if kind == _REQUEST:
            rid = key + 1
            req = Request(rid, int(pop.homes[key]), net.station, t)
            requests[rid] = req
            choice = assign(fleet_list, req, t, cfg, net, requests)
            v = fleet[choice.vehicle_id]
            v.tour = choice.tour
            if record_events:
                events.append(Event(t, v.id, "assign", rid, req.origin))
            if not v.moving and v.id not in pending:
                pending.add(v.id)
                heapq.heappush(heap, (t, _ARRIVAL, seq, v.id))
                seq += 1
            continue

        v = fleet[key]
        pending.discard(v.id)
        complete_link(net, v)
        for ev in on_node_arrival(net, v, t, requests):
            if ev.kind == "pickup":
                waits.append(t - requests[ev.request_id].request_time)
                pickup_time[ev.request_id] = t
            elif ev.kind == "dropoff":
                i = ev.request_id - 1
                c = int(fare_cents[i])
                revenue_cents[v.id] += c
                experienced[i] = (pickup_time[ev.request_id] - requests[ev.request_id].request_time,
                                  t - pickup_time[ev.request_id], c / 100)
            if record_events and (ev.kind != "arrive_node" or record_events == "full"):
                events.append(ev)
        if v.moving:
            heapq.heappush(heap, (v.arrival_time, _ARRIVAL, seq, v.id))
            seq += 1

    cm = sc.cost_model
    distance = {vid: fleet[vid].odometer for vid in vehicle_ids}
    driver_profits = {vid: revenue_cents[vid] / 100 - cm.cost(distance[vid]) for vid in vehicle_ids}
    total_rev_cents = sum(revenue_cents.values())
    total_dist = sum(distance.values())
    op_cost = cm.cost(total_dist)
    revenue = total_rev_cents / 100
    commission = sc.commission_rate * revenue
    if sc.fleet_kind is FleetKind.HDV:
        profit = sum(driver_profits.values())
    else:
        profit = revenue - op_cost if sc.owned else commission

    # traveller-side total, tallied independently of the vehicle ledgers
    served = np.flatnonzero(modes == Mode.FTS)
    spend_cents = int(np.rint(experienced[served, COST] * 100).astype(np.int64).sum())
    counts = np.bincount(modes, minlength=demand.N_MODES)
    ridership = len(waits)
    metrics = DayMetrics(
        day=state.day,
        ridership=ridership,
        mean_wait=float(np.mean(waits)) if waits else 0.0,
        fleet_size=len(vehicle_ids),
        total_profit=profit,
        consumer_surplus=demand.consumer_surplus(state.utilities, world.coef),
        shares=tuple(float(c) / n for c in counts),
        fts_choosers=int(len(fts_idx)),
        revenue_cents=total_rev_cents,
        traveler_spend_cents=spend_cents,
        distance_m=total_dist,
        operating_cost=op_cost,
        commission=commission,
    )
    if fallback.any():
        log.debug("day %d: %d FTS choosers fell back to auto", state.day, int(fallback.sum()))
    return DayOutcome(metrics, experienced, modes, driver_profits, events, fallback)


def step_day_transition(state: SimulationState, outcome: DayOutcome) -> SimulationState:
    """Learning for travellers and supply, then tomorrow's fleet and mode draws."""
    sc, pop = state.scenario, state.world.population
    lam = sc.traveler_learning
    rows = np.arange(len(pop))
    chosen = outcome.realized_modes
    los = state.los.copy()
    los[rows, chosen] = (1 - lam) * los[rows, chosen] + lam * outcome.experienced
    fb = np.flatnonzero(outcome.fallback)
    if len(fb):
        los[fb, Mode.FTS, WAIT] = (1 - lam) * los[fb, Mode.FTS, WAIT] + lam * pop.params.unavailable_wait_s
    los[:, Mode.FTS, COST] = pop.fares_cents(sc.fares, sc.shared) / 100

    drivers = state.drivers
    theta = outcome.metrics.ridership
    if sc.fleet_kind is FleetKind.AV:
        fleet = av_fleet_size(theta, sc.policy)
    else:
        realized = {d.id: outcome.driver_profits.get(d.id, 0.0) for d in drivers}
        drivers = hdv_update(drivers, realized, sc.profit_threshold, sc.max_fleet)
        fleet = sum(d.active for d in drivers)

    nxt = SimulationState(sc, state.world, state.replication, state.day + 1, los, fleet, drivers)
    draw_choices(nxt)
    return nxt


def converged(history: Sequence[DayMetrics], epsilon: float = 0.02, window: int = 5,
              demand_tol: int = 3) -> bool:
    """Mode shares steady to within ``epsilon`` over the trailing window and ridership steady."""
    if window < 2:
        raise ValueError("window must be at least 2")
    if len(history) < window:
        return False
    tail = history[-window:]
    shares = np.array([d.shares for d in tail])
    if np.max(np.abs(np.diff(shares, axis=0))) >= epsilon:
        return False
    return abs(tail[-1].ridership - tail[-2].ridership) <= demand_tol


def run_scenario(sc: Scenario, world: World | None = None, replication: int = 0,
                 record_events: bool | str = False) -> RunResult:
    world = world or default_world()
    state = initial_state(sc, world, replication)
    days: list[DayMetrics] = []
    events: list[tuple[int, Event]] = []
    conv_day = None
    for d in range(sc.days + 1):
        if d:
            state = step_day_transition(state, outcome)
        outcome = run_day(state, d, record_events)
        days.append(outcome.metrics)
        if record_events:
            events.extend((d, e) for e in outcome.events)
        if conv_day is None and d >= 1 and converged(days):
            conv_day = d
    return RunResult(sc.label, replication, days, conv_day is not None, conv_day,
                     events if record_events else None)
