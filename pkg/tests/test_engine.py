import math

import numpy as np
import pytest

from ftsim.demand import Mode, Population, UtilityCoefficients
from ftsim.engine import (
    DayMetrics,
    DayOutcome,
    FleetKind,
    RunResult,
    Scenario,
    World,
    converged,
    default_world,
    initial_state,
    run_day,
    run_scenario,
    step_day_transition,
)
from ftsim.supply import av_fleet_size

from checks import audit_events
from conftest import line_network

T0 = 6.5 * 3600


def tiny_world(homes, departures=None):
    # depot 0 - 1 - 2 - 3 (station), 60 s and 500 m per link
    net = line_network([60.0] * 3, lengths=[500.0] * 3, depot=0, station=3)
    departures = departures if departures is not None else [T0 + 10.0 * i for i in range(len(homes))]
    pop = Population(np.array(homes), np.array(departures), net)
    return World(net, pop, UtilityCoefficients())


def fixed_day(world, fts_rows, sc):
    state = initial_state(sc, world)
    choices = np.full(len(world.population), Mode.AUTO)
    choices[list(fts_rows)] = Mode.FTS
    state.choices = choices
    return state, run_day(state, 0, record_events=True)


AV1 = Scenario("av", FleetKind.AV, initial_fleet=1, capacity=2)


def test_no_fts_choosers():
    world = tiny_world([1, 2])
    _, out = fixed_day(world, [], AV1)
    m = out.metrics
    assert (m.ridership, m.mean_wait, m.wait_count) == (0, 0.0, 0)
    assert m.shares[Mode.AUTO] == 1.0 and m.distance_m == 0.0


def test_single_request_wait_is_depot_distance():
    world = tiny_world([2, 1])
    _, out = fixed_day(world, [0], AV1)
    assert out.metrics.ridership == 1
    assert out.metrics.mean_wait == world.net.shortest_time(0, 2)
    wait, ivt, cost = out.experienced[0]
    assert (wait, ivt) == (120.0, 60.0)
    assert out.metrics.distance_m == 3 * 500.0 + 3 * 500.0


def test_colocated_requests_share_one_tour():
    world = tiny_world([2, 2], departures=[T0, T0])
    _, shared = fixed_day(world, [0, 1], AV1)
    _, single = fixed_day(world, [0], AV1)
    kinds = [e.kind for e in shared.events]
    assert kinds.count("pickup") == 2 and kinds.count("dropoff") == 2
    assert shared.metrics.ridership == 2
    assert shared.metrics.distance_m < 2 * single.metrics.distance_m


def test_fares_reconcile_to_the_cent():
    world = tiny_world([1, 2, 1, 2])
    _, out = fixed_day(world, [0, 1, 2, 3], Scenario("av", FleetKind.AV, initial_fleet=2, discount_pct=25))
    m = out.metrics
    assert m.revenue_cents == m.traveler_spend_cents > 0
    assert m.revenue_cents == sum(world.population.fares_cents(
        Scenario("x", discount_pct=25).fares, True)[:4])


def test_empty_fleet_falls_back_to_auto():
    world = tiny_world([1, 2])
    sc = Scenario("hdv", FleetKind.HDV, initial_fleet=0)
    state, out = fixed_day(world, [0], sc)
    assert out.metrics.ridership == 0 and out.fallback[0]
    assert out.realized_modes[0] == Mode.AUTO


def test_events_pass_audit():
    world = tiny_world([1, 2, 1, 2, 1], departures=[T0, T0 + 1, T0 + 2, T0 + 3, T0 + 4])
    _, out = fixed_day(world, range(5), AV1)
    rows = [(0, e.time, e.vehicle_id, e.kind, e.request_id, e.node) for e in out.events]
    assert audit_events(rows, 2) == []


def _outcome(state, ridership, profits=None):
    n = len(state.world.population)
    m = DayMetrics(0, ridership, 0.0, state.fleet_size, 0.0, 0.0, (1.0, 0, 0, 0, 0))
    return DayOutcome(m, state.world.population.static_los[np.arange(n), 0], np.zeros(n, dtype=int),
                      profits or {}, [], np.zeros(n, dtype=bool))


def test_transition_av_fleet_law():
    world = tiny_world([1, 2])
    state = initial_state(Scenario("av", FleetKind.AV, capacity=4), world)
    assert step_day_transition(state, _outcome(state, 30)).fleet_size == 8


def test_transition_hdv_exit():
    world = tiny_world([1, 2])
    state = initial_state(Scenario("hdv", FleetKind.HDV, initial_fleet=5), world)
    nxt = step_day_transition(state, _outcome(state, 3, {i: 2.0 for i in range(10)}))
    assert nxt.fleet_size == 0 and nxt.vehicle_ids == []


def test_transition_constant_experience_converges():
    world = tiny_world([1, 2])
    state = initial_state(Scenario("av", FleetKind.AV), world)
    target = state.los[:, Mode.AUTO].copy()
    state.los[:, Mode.AUTO] += 100.0
    for _ in range(60):
        state = step_day_transition(state, _outcome(state, 0))
    assert np.allclose(state.los[:, Mode.AUTO], target, atol=1e-6)


@pytest.fixture(scope="module")
def world():
    return default_world(travelers=500)


def test_days_zero(world):
    res = run_scenario(Scenario("x", days=0), world)
    assert len(res.days) == 1 and res.days[0].day == 0


def test_deterministic(world):
    sc = Scenario("x", FleetKind.HDV, discount_pct=25, days=5)
    assert run_scenario(sc, world, 1) == run_scenario(sc, world, 1)


def test_replications_differ(world):
    sc = Scenario("x", days=3)
    a, b = run_scenario(sc, world, 0), run_scenario(sc, world, 1)
    assert [d.ridership for d in a.days] != [d.ridership for d in b.days] or \
        [d.shares for d in a.days] != [d.shares for d in b.days]


@pytest.mark.parametrize("floor", [1, 0])
def test_fleet_law_holds_every_day(world, floor):
    res = run_scenario(Scenario("x", FleetKind.AV, discount_pct=15, days=15, min_fleet=floor), world)
    pol = Scenario("x", min_fleet=floor).policy
    for prev, cur in zip(res.days, res.days[1:]):
        assert cur.fleet_size == av_fleet_size(prev.ridership, pol)


def test_daily_conservation_and_audit(world):
    sc = Scenario("x", FleetKind.AV, discount_pct=50, days=6)
    res = run_scenario(sc, world, record_events=True)
    for d in res.days:
        assert math.isclose(sum(d.shares), 1.0, abs_tol=1e-12)
        assert d.revenue_cents == d.traveler_spend_cents
        day_events = [e for day, e in res.events if day == d.day]
        assert sum(e.kind == "pickup" for e in day_events) == d.ridership
        assert sum(e.kind == "dropoff" for e in day_events) == d.ridership
        assert d.ridership == d.fts_choosers
    rows = [(day, e.time, e.vehicle_id, e.kind, e.request_id, e.node) for day, e in res.events]
    assert audit_events(rows, sc.capacity) == []


def test_sharing_raises_ridership():
    world = default_world()
    base = Scenario("base", FleetKind.HDV, capacity=1, profit_threshold=1.0, days=30)
    shared = Scenario("shared", FleetKind.AV, capacity=4, days=30, discount_pct=25)
    for rep in range(2):
        b = run_scenario(base, world, rep).equilibrium()
        s = run_scenario(shared, world, rep).equilibrium()
        assert s["ridership"] > b["ridership"]


def _history(riders, shares=None):
    return [DayMetrics(i, r, 0.0, 1, 0.0, 0.0, shares[i] if shares else (0.7, 0.2, 0.05, 0.04, 0.01))
            for i, r in enumerate(riders)]


def test_converged_constant():
    assert converged(_history([20] * 6))


def test_converged_oscillating():
    shares = [(0.7, 0.2, 0.05, 0.04, 0.01 + (0.01 if i % 2 else -0.01)) for i in range(6)]
    shares = [(1 - s[4] - 0.29, 0.2, 0.05, 0.04, s[4]) for s in shares]
    hist = _history([20, 22, 18, 22, 18, 22], shares)
    assert not converged(hist, epsilon=0.01)


def test_converged_geometric_decay():
    eps, rate = 0.01, 0.7
    gap = [0.1 * rate ** d for d in range(40)]
    shares = [(0.7 - g, 0.2, 0.05, 0.04, 0.01 + g) for g in gap]
    hist = _history([20] * 40, shares)
    first = next(d for d in range(2, 40) if converged(hist[: d + 1], epsilon=eps, window=2))
    # one-day changes 0.1 * 0.3 * 0.7**(d-1) fall below eps
    bound = math.ceil(math.log(eps / 0.03) / math.log(rate)) + 1
    assert first == bound


def test_converged_needs_window():
    with pytest.raises(ValueError):
        converged(_history([1, 1]), window=1)
    assert not converged(_history([1, 1]), window=5)


def test_equilibrium_summary():
    res = RunResult("x", 0, _history([10, 20, 30]))
    eq = res.equilibrium(2)
    assert eq["ridership"] == 25 and eq["fleet_var"] == 0.0
