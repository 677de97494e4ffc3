"""Run configuration: JSON schema, validation and the built-in scenario matrix.

A config file looks like::

    {
      "network": {"grid": {"rows": 9, "cols": 9, "link_length": 250, "speed": 8}},
      "population": {"synthesize": {"count": 2000, "seed": 2024}},
      "coefficients": {"beta_cost": -0.3, "calibrate": true},
      "days": 50, "replications": 10, "seed": 7, "output": "results",
      "scenarios": [
        {"label": "AV_50", "fleet_type": "AV", "max_fleet_size": 10,
         "fleet_capacity": 4, "profit_threshold": null, "fixed_fare": 4.25,
         "fare_per_increment": 0.25, "discount_pct": 50,
         "operating_cost_per_km": 0.51}
      ]
    }

``network`` may instead be ``{"path": "net.json"}`` and ``population``
``{"path": "pop.json"}``; relative paths resolve against the config file.
Scenario keys beyond the scenario-matrix columns (``gamma``, ``kappa``,
``commission_rate``, ``owned``, ...) are optional.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .demand import ModeParams, Population, UtilityCoefficients
from .engine import DEFAULT_GRID, Scenario, World
from .network import NetworkError, RoadNetwork, generate_grid, load_network
from .supply import FleetKind


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


BASE_LABEL = "Base Case"

# scenario-matrix column -> Scenario field
COLUMN_KEYS = {
    "fleet_type": "fleet_kind",
    "max_fleet_size": "max_fleet",
    "fleet_capacity": "capacity",
    "profit_threshold": "profit_threshold",
    "fixed_fare": "base_fare",
    "fare_per_increment": "increment_fare",
    "increment_distance_m": "increment_distance",
    "discount_pct": "discount_pct",
    "operating_cost_per_km": "operating_cost",
}
EXTRA_KEYS = {"gamma", "kappa", "commission_rate", "owned", "min_fleet", "initial_fleet",
              "traveler_learning", "driver_learning", "driver_pool", "initial_driver_profit",
              "eq_window"}
FLEET_TYPES = {"HDV": FleetKind.HDV, "AV": FleetKind.AV,
               FleetKind.HDV.value: FleetKind.HDV, FleetKind.AV.value: FleetKind.AV}


def _row(label, fleet, capacity, threshold, discount):
    return {"label": label, "fleet_type": fleet, "max_fleet_size": 10, "fleet_capacity": capacity,
            "profit_threshold": threshold, "fixed_fare": 4.25, "fare_per_increment": 0.25,
            "discount_pct": discount, "operating_cost_per_km": 0.51}


PRESETS: dict[str, dict[str, Any]] = {
    "table10.1": {
        "network": {"grid": dict(DEFAULT_GRID)},
        "population": {"synthesize": {"count": 2000, "seed": 2024}},
        "coefficients": {"calibrate": True},
        "days": 50,
        "replications": 10,
        "seed": 0,
        "scenarios": [_row(BASE_LABEL, "HDV", 1, 1.0, 0)]
        + [_row(f"HDV_{d}", "HDV", 4, 25.0, d) for d in (0, 15, 25, 50)]
        + [_row(f"AV_{d}", "AV", 4, None, d) for d in (0, 15, 25, 50)],
    }
}


@dataclass
class RunConfig:
    """Validated configuration with every input resolved."""

    network: dict
    population: dict
    coefficients: dict
    mode_params: dict
    scenarios: list[Scenario]
    days: int
    replications: int
    seed: int
    output: Path | None
    base_dir: Path = field(default=Path("."), compare=False)

    def canonical(self) -> dict:
        """Everything that changes results; the output location is excluded."""
        return {
            "network": self.network,
            "population": self.population,
            "coefficients": self.coefficients,
            "mode_params": self.mode_params,
            "days": self.days,
            "replications": self.replications,
            "seed": self.seed,
            "scenarios": [scenario_dict(s) for s in self.scenarios],
        }

    def config_hash(self) -> str:
        doc = self.canonical()
        # hash file contents rather than their names
        for key in ("network", "population"):
            if "path" in doc[key]:
                path = self.base_dir / doc[key]["path"]
                doc[key] = {"sha256": hashlib.sha256(path.read_bytes()).hexdigest()}
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def build_world(self) -> World:
        net = build_network(self.network, self.base_dir)
        params = ModeParams(**self.mode_params)
        pop = build_population(self.population, net, params, self.base_dir)
        coef_kw = {k: v for k, v in self.coefficients.items() if k != "calibrate"}
        if "asc" in coef_kw:
            coef_kw["asc"] = tuple(coef_kw["asc"])
        coef = UtilityCoefficients(**coef_kw)
        return World.build(net, pop, coef, calibrate=self.coefficients.get("calibrate", True))


def scenario_dict(sc: Scenario) -> dict:
    out = {}
    for f in fields(Scenario):
        v = getattr(sc, f.name)
        out[f.name] = v.value if isinstance(v, FleetKind) else v
    return out


def build_network(spec: dict, base_dir: Path) -> RoadNetwork:
    if "path" in spec:
        return load_network(base_dir / spec["path"])
    return generate_grid(**spec["grid"])


def build_population(spec: dict, net: RoadNetwork, params: ModeParams, base_dir: Path) -> Population:
    if "path" in spec:
        return Population.load(base_dir / spec["path"], net, params)
    return Population.synthesize(net, params=params, **spec["synthesize"])


def _scenario(row: dict, seed: int, days: int, replications: int) -> Scenario:
    if not isinstance(row, dict):
        raise ConfigError("each scenario must be a JSON object")
    label = row.get("label")
    if not isinstance(label, str) or not label:
        raise ConfigError("every scenario needs a nonempty label")
    unknown = set(row) - set(COLUMN_KEYS) - EXTRA_KEYS - {"label"}
    if unknown:
        raise ConfigError(f"scenario {label!r}: unknown keys {sorted(unknown)}")
    kw: dict[str, Any] = {"label": label, "seed": seed, "days": days, "replications": replications}
    for key, name in COLUMN_KEYS.items():
        if key in row and row[key] is not None:
            kw[name] = row[key]
    for key in EXTRA_KEYS & set(row):
        kw[key] = row[key]
    if "fleet_kind" in kw:
        try:
            kw["fleet_kind"] = FLEET_TYPES[kw["fleet_kind"]]
        except (KeyError, TypeError):
            raise ConfigError(f"scenario {label!r}: fleet_type must be HDV or AV") from None
    try:
        return Scenario(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scenario {label!r}: {exc}") from exc


def _int(doc: dict, key: str, default: int, minimum: int) -> int:
    v = doc.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"{key} must be an integer >= {minimum}")
    return v


def parse_config(doc: dict, base_dir: Path = Path("."), *, days: int | None = None,
                 replications: int | None = None, seed: int | None = None,
                 scenario: str | None = None, zero_floor: bool = False,
                 output: str | Path | None = None) -> RunConfig:
    """Validate a config document and apply command-line overrides.

    Raises :class:`ConfigError` for anything that would stop the run, so
    callers can fail before writing any output.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc = copy.deepcopy(doc)
    overrides = {"days": days, "replications": replications, "seed": seed}
    doc.update({k: v for k, v in overrides.items() if v is not None})
    n_days = _int(doc, "days", 10, 0)
    n_reps = _int(doc, "replications", 1, 1)
    master = _int(doc, "seed", 0, 0)

    net_spec = doc.get("network", {"grid": dict(DEFAULT_GRID)})
    pop_spec = doc.get("population", {"synthesize": {"count": 2000, "seed": 2024}})
    for name, spec, keys in (("network", net_spec, ("path", "grid")),
                             ("population", pop_spec, ("path", "synthesize"))):
        if not isinstance(spec, dict) or len(spec) != 1 or next(iter(spec)) not in keys:
            raise ConfigError(f"{name} must have exactly one of {keys}")
        if "path" in spec and not (base_dir / spec["path"]).is_file():
            raise ConfigError(f"{name} file not found: {base_dir / spec['path']}")

    coefficients = doc.get("coefficients", {})
    mode_params = doc.get("mode_params", {})
    if not isinstance(coefficients, dict) or not isinstance(mode_params, dict):
        raise ConfigError("coefficients and mode_params must be JSON objects")
    try:
        UtilityCoefficients(**{k: tuple(v) if k == "asc" else v
                                for k, v in coefficients.items() if k != "calibrate"})
        ModeParams(**mode_params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad coefficients or mode parameters: {exc}") from exc

    rows = doc.get("scenarios")
    if not isinstance(rows, list) or not rows:
        raise ConfigError("config needs a nonempty scenarios list")
    scenarios = [_scenario(r, master, n_days, n_reps) for r in rows]
    labels = [s.label for s in scenarios]
    if len(set(labels)) != len(labels):
        raise ConfigError("scenario labels must be unique")
    if scenario is not None:
        scenarios = [s for s in scenarios if s.label == scenario]
        if not scenarios:
            raise ConfigError(f"no scenario labelled {scenario!r}; have {labels}")
    if zero_floor:
        scenarios = [_replace(s, min_fleet=0) for s in scenarios]

    out = output if output is not None else doc.get("output")
    cfg = RunConfig(net_spec, pop_spec, coefficients, mode_params, scenarios, n_days, n_reps,
                    master, Path(out) if out is not None else None, base_dir)
    return cfg


def _replace(sc: Scenario, **kw) -> Scenario:
    d = scenario_dict(sc)
    d.update(kw)
    return Scenario(**d)


def load_config(path: str | Path | None = None, preset: str | None = None, **overrides) -> RunConfig:
    if (path is None) == (preset is None):
        raise ConfigError("give exactly one of a config path or a preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; have {sorted(PRESETS)}")
        return parse_config(PRESETS[preset], Path("."), **overrides)
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(doc, path.parent, **overrides)


def check_inputs(cfg: RunConfig) -> World:
    """Build the world once so input errors surface as config errors."""
    try:
        return cfg.build_world()
    except (NetworkError, KeyError, TypeError, ValueError, OSError) as exc:
        raise ConfigError(f"invalid network or population: {exc}") from exc
