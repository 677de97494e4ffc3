"""Traveller population, logit access-mode choice, learning and consumer surplus."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .network import RoadNetwork
from .supply import FareSchedule, fare_cents


class Mode(IntEnum):
    AUTO = 0
    BUS = 1
    WALK = 2
    BIKE = 3
    FTS = 4


MODES = tuple(Mode)
N_MODES = len(MODES)
WAIT, IVT, COST = 0, 1, 2

STUDY_START = 6.5 * 3600
STUDY_END = 7.5 * 3600

# auto, bus, walk, bike, fts
BASE_SHARES = (0.73, 0.19, 0.01, 0.06, 0.01)


@dataclass(frozen=True)
class UtilityCoefficients:
    asc: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0, 0.0)
    beta_ivt: float = -0.0008  # per second
    beta_wait: float = -0.0016  # per second
    beta_cost: float = -0.3  # per dollar
    scale: float = 1.0

    def __post_init__(self):
        if len(self.asc) != N_MODES:
            raise ValueError(f"need {N_MODES} alternative-specific constants")
        if self.beta_cost >= 0:
            raise ValueError("beta_cost must be negative")
        if self.scale <= 0:
            raise ValueError("scale must be positive")


@dataclass(frozen=True)
class LevelOfService:
    wait: float
    ivt: float
    cost: float


@dataclass(frozen=True)
class ModeParams:
    """Level-of-service assumptions for the non-FTS access modes."""

    auto_fixed_cost: float = 4.0  # parking, dollars
    auto_cost_per_km: float = 0.25
    auto_access_s: float = 180.0  # park and walk to platform
    bus_fare: float = 3.0
    bus_wait_s: float = 450.0
    bus_access_s: float = 240.0
    bus_speed: float = 6.0
    walk_speed: float = 1.4
    bike_speed: float = 4.0
    fts_initial_wait_s: float = 600.0
    unavailable_wait_s: float = 1800.0


@dataclass
class Traveler:
    id: int
    home: int
    station: int
    departure_time: float
    perceived: dict[Mode, LevelOfService] = field(default_factory=dict)
    last_mode: Mode | None = None


def utility(t: Traveler, m: Mode, coef: UtilityCoefficients) -> float:
    try:
        los = t.perceived[m]
    except KeyError:
        raise KeyError(f"traveler {t.id} has no perceived level of service for {m.name}") from None
    return coef.asc[m] + coef.beta_ivt * los.ivt + coef.beta_wait * los.wait + coef.beta_cost * los.cost


def utilities(los: np.ndarray, coef: UtilityCoefficients) -> np.ndarray:
    """Systematic utilities for a (..., modes, 3) level-of-service array."""
    return (np.asarray(coef.asc) + coef.beta_wait * los[..., WAIT]
            + coef.beta_ivt * los[..., IVT] + coef.beta_cost * los[..., COST])


def choice_probabilities(v: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Row-wise logit probabilities; ``-inf`` marks unavailable alternatives."""
    z = scale * np.asarray(v, dtype=float)
    top = z.max(axis=-1, keepdims=True)
    if np.any(~np.isfinite(top)):
        raise ValueError("every alternative has utility -inf")
    e = np.exp(z - top)
    return e / e.sum(axis=-1, keepdims=True)


def sample_modes(probs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row from pre-drawn U(0,1) numbers."""
    cdf = np.cumsum(probs, axis=-1)
    idx = (uniforms[:, None] >= cdf).sum(axis=-1)
    # the last cumulative value may round below 1
    return np.minimum(idx, probs.shape[-1] - 1)


def choose_mode(utils: Mapping[Mode, float] | Sequence[float], rng: np.random.Generator, scale: float = 1.0) -> Mode:
    if isinstance(utils, Mapping):
        v = np.array([utils.get(m, -np.inf) for m in MODES], dtype=float)
    else:
        v = np.asarray(utils, dtype=float)
    p = choice_probabilities(v[None, :], scale)
    return Mode(int(sample_modes(p, np.array([rng.random()]))[0]))


def update_perception(
    perceived: LevelOfService, experienced: LevelOfService, lam: float
) -> LevelOfService:
    if not 0 < lam <= 1:
        raise ValueError("learning weight must lie in (0, 1]")
    return LevelOfService(
        (1 - lam) * perceived.wait + lam * experienced.wait,
        (1 - lam) * perceived.ivt + lam * experienced.ivt,
        (1 - lam) * perceived.cost + lam * experienced.cost,
    )


def update_traveler(t: Traveler, chosen: Mode, experienced: LevelOfService, lam: float, posted_fare: float) -> Traveler:
    """Smooth the chosen mode only; the posted FTS fare is visible to everyone."""
    perceived = dict(t.perceived)
    perceived[chosen] = update_perception(perceived[chosen], experienced, lam)
    if Mode.FTS in perceived:
        fts = perceived[Mode.FTS]
        perceived[Mode.FTS] = LevelOfService(fts.wait, fts.ivt, posted_fare)
    return replace(t, perceived=perceived, last_mode=chosen)


def consumer_surplus(v: np.ndarray, coef: UtilityCoefficients) -> float:
    """Logsum consumer surplus in dollars, summed over travellers (rows of ``v``)."""
    if coef.beta_cost >= 0:
        raise ValueError("beta_cost must be negative")
    v = np.atleast_2d(np.asarray(v, dtype=float))
    return float(logsumexp(coef.scale * v, axis=-1).sum() / abs(coef.beta_cost * coef.scale))


class Population:
    """Array-backed traveller set used by the simulator.

    ``los`` has shape (n, modes, 3) holding perceived wait, in-vehicle time
    and cost. ``static_los`` is the fixed level of service of the non-FTS
    modes, which is also what those travellers experience.
    """

    def __init__(self, homes: np.ndarray, departure: np.ndarray, net: RoadNetwork,
                 params: ModeParams | None = None):
        self.net = net
        self.params = params or ModeParams()
        self.homes = np.asarray(homes, dtype=np.int64)
        self.departure = np.asarray(departure, dtype=float)
        if np.any(self.homes == net.station):
            raise ValueError("travelers cannot live at the station node")
        if np.any((self.departure < STUDY_START) | (self.departure > STUDY_END)):
            raise ValueError("departure times must fall in the study window")
        self.station = net.station
        self.distance = np.array([net.trip_distance(h, net.station) for h in self.homes])
        self.free_flow = np.array([net.shortest_time(h, net.station) for h in self.homes])
        self.static_los = self._static_los()
        self._fare_cache: dict[tuple[FareSchedule, bool], np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.homes)

    def _static_los(self) -> np.ndarray:
        p = self.params
        d, tt = self.distance, self.free_flow
        los = np.zeros((len(d), N_MODES, 3))
        los[:, Mode.AUTO, IVT] = tt + p.auto_access_s
        los[:, Mode.AUTO, COST] = p.auto_fixed_cost + p.auto_cost_per_km * d / 1000
        los[:, Mode.BUS, WAIT] = p.bus_wait_s
        los[:, Mode.BUS, IVT] = d / p.bus_speed + p.bus_access_s
        los[:, Mode.BUS, COST] = p.bus_fare
        los[:, Mode.WALK, IVT] = d / p.walk_speed
        los[:, Mode.BIKE, IVT] = d / p.bike_speed
        los[:, Mode.FTS, WAIT] = p.fts_initial_wait_s
        los[:, Mode.FTS, IVT] = tt
        return los

    def fares_cents(self, sched: FareSchedule, shared: bool) -> np.ndarray:
        key = (sched, shared)
        if key not in self._fare_cache:
            out = np.array([fare_cents(d, shared, sched) for d in self.distance], dtype=np.int64)
            out.setflags(write=False)
            self._fare_cache[key] = out
        return self._fare_cache[key]

    def initial_los(self, sched: FareSchedule, shared: bool = False) -> np.ndarray:
        los = self.static_los.copy()
        los[:, Mode.FTS, COST] = self.fares_cents(sched, shared) / 100
        return los

    def travelers(self, los: np.ndarray | None = None) -> list[Traveler]:
        los = self.static_los if los is None else los
        out = []
        for i, (h, dep) in enumerate(zip(self.homes, self.departure)):
            perceived = {m: LevelOfService(*los[i, m]) for m in MODES}
            out.append(Traveler(i, int(h), self.station, float(dep), perceived))
        return out

    # construction ------------------------------------------------------------

    @classmethod
    def synthesize(cls, net: RoadNetwork, count: int, seed: int, params: ModeParams | None = None,
                   max_distance: float | None = None) -> "Population":
        """Homes uniform over non-station nodes; departures uniform over the study window.

        ``max_distance`` restricts homes to nodes within that network distance
        of the station.
        """
        rng = np.random.default_rng(seed)
        candidates = np.array([n for n in net.node_ids if n != net.station and
                               (max_distance is None or net.trip_distance(n, net.station) <= max_distance)])
        if not len(candidates):
            raise ValueError("no candidate home nodes")
        homes = rng.choice(candidates, size=count)
        departure = np.round(rng.uniform(STUDY_START, STUDY_END, size=count), 1)
        return cls(homes, departure, net, params)

    @classmethod
    def load(cls, path: str | Path, net: RoadNetwork, params: ModeParams | None = None) -> "Population":
        data = json.loads(Path(path).read_text())
        rows = data["travelers"] if isinstance(data, dict) else data
        homes = [int(r["home"]) for r in rows]
        dep = [float(r["departure_time"]) for r in rows]
        return cls(np.array(homes), np.array(dep), net, params)

    def to_dict(self) -> dict:
        return {"travelers": [{"id": i, "home": int(h), "departure_time": float(t)}
                              for i, (h, t) in enumerate(zip(self.homes, self.departure))]}


def calibrate_asc(
    los: np.ndarray,
    coef: UtilityCoefficients,
    target: Sequence[float] = BASE_SHARES,
    reference: Mode = Mode.AUTO,
    tol: float = 1e-6,
    max_sweeps: int = 200,
) -> UtilityCoefficients:
    """Fit alternative-specific constants so expected day-0 shares hit ``target``.

    Coordinate-wise bisection: each sweep solves one mode's constant with the
    others held fixed. The reference mode's constant stays at zero.
    """
    target = np.asarray(target, dtype=float)
    if target.shape != (N_MODES,) or not np.isclose(target.sum(), 1.0) or np.any(target <= 0):
        raise ValueError("target shares must be positive and sum to one")
    base_v = utilities(los, replace(coef, asc=(0.0,) * N_MODES))
    asc = np.zeros(N_MODES)

    def shares(a):
        return choice_probabilities(base_v + a, coef.scale).mean(axis=0)

    for _ in range(max_sweeps):
        for m in MODES:
            if m == reference:
                continue
            lo, hi = -30.0, 30.0
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                asc[m] = mid
                if shares(asc)[m] < target[m]:
                    lo = mid
                else:
                    hi = mid
            asc[m] = 0.5 * (lo + hi)
        if np.max(np.abs(shares(asc) - target)) < tol:
            break
    return replace(coef, asc=tuple(float(a) for a in asc))
