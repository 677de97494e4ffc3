"""Fares, operator economics and day-to-day fleet sizing.

Money is handled in integer cents wherever amounts are summed so that fares
collected and traveller spending reconcile exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from typing import Iterable, Mapping, Sequence


@dataclass(frozen=True)
class FareSchedule:
    base_fare: float = 4.25
    increment_fare: float = 0.25
    increment_distance: float = 130.0
    discount_pct: float = 0.0

    def __post_init__(self):
        if min(self.base_fare, self.increment_fare) < 0 or self.increment_distance <= 0:
            raise ValueError("fare schedule values must be nonnegative")
        if not 0 <= self.discount_pct < 100:
            raise ValueError("discount must lie in [0, 100)")


@dataclass(frozen=True)
class CostModel:
    operating_cost_per_km: float = 0.51

    def __post_init__(self):
        if self.operating_cost_per_km < 0:
            raise ValueError("operating cost must be nonnegative")

    def cost(self, distance_m: float) -> float:
        return self.operating_cost_per_km * distance_m / 1000.0


class FleetKind(str, Enum):
    HDV = "hdv_crowdsourced"
    AV = "av_central"


@dataclass(frozen=True)
class OperatorPolicy:
    kind: FleetKind = FleetKind.AV
    max_fleet: int = 10
    capacity: int = 4
    profit_threshold: float = 25.0
    commission_rate: float = 0.2
    owned: bool = True
    min_fleet: int = 1  # AV floor; 0 gives the literal [0, M] clamp

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be at least 1")
        if self.max_fleet < 0 or not 0 <= self.min_fleet <= self.max_fleet:
            raise ValueError("need 0 <= min_fleet <= max_fleet")
        if not 0 <= self.commission_rate <= 1:
            raise ValueError("commission_rate must lie in [0, 1]")


@dataclass(frozen=True)
class DriverAgent:
    id: int
    perceived_profit: float
    active: bool = False
    learning_rate: float = 0.3


@dataclass(frozen=True)
class FleetPlan:
    day: int
    fleet_size: int
    demand_forecast: int


def _to_cents(amount: Decimal) -> int:
    return int(amount.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP) * 100)


def fare_cents(distance: float, shared_day: bool, sched: FareSchedule) -> int:
    if distance < 0:
        raise ValueError("distance must be nonnegative")
    step = sched.increment_distance
    # tolerate float noise from summed link lengths sitting on a step boundary
    increments = max(0, math.ceil((distance - step) / step - 1e-9))
    raw = Decimal(str(sched.base_fare)) + Decimal(str(sched.increment_fare)) * increments
    if shared_day and sched.discount_pct:
        raw = raw * (Decimal(100) - Decimal(str(sched.discount_pct))) / Decimal(100)
    return _to_cents(raw)


def fare(distance: float, shared_day: bool, sched: FareSchedule) -> float:
    """Metered fare in dollars, rounded to the cent.

    The base fare covers the first ``increment_distance`` meters; each
    started step beyond that adds ``increment_fare``. The sharing discount
    applies only when ``shared_day`` is set.
    """
    return fare_cents(distance, shared_day, sched) / 100


def driver_day_profit(revenue: float, distance_driven: float, cm: CostModel) -> float:
    return revenue - cm.cost(distance_driven)


def hdv_update(
    drivers: Sequence[DriverAgent],
    realized: Mapping[int, float],
    threshold: float,
    max_fleet: int | None = None,
) -> list[DriverAgent]:
    """One day of crowdsourced entry/exit.

    Active drivers smooth their own realized profit into their perception;
    inactive drivers smooth towards the mean realized profit of the active
    ones (no update if nobody drove). Tomorrow's active set is everyone at or
    above ``threshold``, highest perceived profit first (then lowest id),
    capped at ``max_fleet``.
    """
    active_profits = [realized[d.id] for d in drivers if d.active]
    market = sum(active_profits) / len(active_profits) if active_profits else None
    updated = []
    for d in drivers:
        signal = realized[d.id] if d.active else market
        p = d.perceived_profit
        if signal is not None:
            p = (1.0 - d.learning_rate) * p + d.learning_rate * signal
        updated.append(replace(d, perceived_profit=p))
    eligible = sorted((d for d in updated if d.perceived_profit >= threshold),
                      key=lambda d: (-d.perceived_profit, d.id))
    if max_fleet is not None:
        eligible = eligible[:max_fleet]
    chosen = {d.id for d in eligible}
    return [replace(d, active=d.id in chosen) for d in updated]


def av_fleet_size(theta_prev: int, policy: OperatorPolicy) -> int:
    """Next-day AV fleet: yesterday's ridership over seat capacity, rounded up and clamped."""
    if theta_prev < 0:
        raise ValueError("demand must be nonnegative")
    return min(policy.max_fleet, max(policy.min_fleet, math.ceil(theta_prev / policy.capacity)))


def operator_profit(
    revenues: Iterable[float],
    distances: Iterable[float],
    cm: CostModel,
    policy: OperatorPolicy,
) -> float:
    revenue = sum(revenues)
    if not policy.owned:
        return policy.commission_rate * revenue
    return revenue - sum(cm.cost(d) for d in distances)
