"""Command-line runner: scenario batches, CSV outputs and cross-scenario summaries.

Exit codes: 0 success, 1 configuration error (nothing written), 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import BASE_LABEL, PRESETS, ConfigError, RunConfig, check_inputs, load_config
from .engine import RunResult, Scenario, World, run_scenario
from .supply import FleetKind

log = logging.getLogger("ftsim")

METRIC_COLUMNS = ["scenario", "replication", "day", "ridership", "mean_wait_s", "fleet_size", "profit",
                  "consumer_surplus", "share_auto", "share_bus", "share_walk", "share_bike", "share_fts"]
ACCOUNT_COLUMNS = ["scenario", "replication", "day", "fleet_type", "revenue_cents", "traveler_spend_cents",
                   "distance_m", "operating_cost", "commission_rate", "fts_choosers"]
EVENT_COLUMNS = ["day", "time", "vehicle_id", "kind", "request_id", "node"]
STATS = ("ridership", "mean_wait_min", "final_fleet", "fleet_var", "profit", "consumer_surplus")

EQ_WINDOW = 10  # trailing days averaged for equilibrium values
VAR_WINDOW = 20  # trailing days for fleet-size variance


def _num(x: float) -> str:
    return repr(float(x))


# cell execution ------------------------------------------------------------

_WORLD: World | None = None


def _init_worker(cfg: RunConfig) -> None:
    global _WORLD
    _WORLD = cfg.build_world()


def _run_cell(args: tuple[Scenario, int, bool | str]) -> RunResult:
    sc, rep, events = args
    return run_scenario(sc, _WORLD, rep, record_events=events)


def run_cells(cfg: RunConfig, world: World, jobs: int = 1, events: bool | str = True) -> list[RunResult]:
    """Run every scenario x replication cell; results come back in cell order."""
    global _WORLD
    cells = [(sc, r, events) for sc in cfg.scenarios for r in range(cfg.replications)]
    if jobs <= 1:
        _WORLD = world
        return [_run_cell(c) for c in cells]
    with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(cfg,)) as pool:
        return list(pool.map(_run_cell, cells))


# writers ---------------------------------------------------------------------

def metrics_rows(results: Sequence[RunResult]):
    for res in results:
        for d in res.days:
            yield [res.label, res.replication, d.day, d.ridership, _num(d.mean_wait), d.fleet_size,
                   _num(d.total_profit), _num(d.consumer_surplus), *(_num(s) for s in d.shares)]


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_outputs(out: Path, cfg: RunConfig, results: Sequence[RunResult], events: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "metrics.csv", METRIC_COLUMNS, metrics_rows(results))
    kinds = {sc.label: sc for sc in cfg.scenarios}
    _write_csv(out / "accounts.csv", ACCOUNT_COLUMNS, (
        [r.label, r.replication, d.day, kinds[r.label].fleet_kind.name, d.revenue_cents,
         d.traveler_spend_cents, _num(d.distance_m), _num(d.operating_cost),
         _num(kinds[r.label].commission_rate), d.fts_choosers]
        for r in results for d in r.days))
    if events:
        ev_dir = out / "events"
        ev_dir.mkdir(exist_ok=True)
        for r in results:
            _write_csv(ev_dir / f"{_slug(r.label)}_rep{r.replication}.csv", EVENT_COLUMNS, (
                [day, _num(e.time), e.vehicle_id, e.kind, e.request_id, e.node] for day, e in r.events or ()))
    table = summarize(out)
    _write_csv(out / "summary.csv", list(table[0]), (list(row.values()) for row in table))
    manifest = {
        "ftsim_version": __version__,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "days": cfg.days,
        "replications": cfg.replications,
        "scenarios": [s.label for s in cfg.scenarios],
        "min_fleet": {s.label: s.min_fleet for s in cfg.scenarios if s.fleet_kind is FleetKind.AV},
        "config": cfg.canonical(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _slug(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in label)


# summary ------------------------------------------------------------------------

def _replication_stats(rows: list[dict]) -> dict[str, float]:
    rows = sorted(rows, key=lambda r: r["day"])
    tail = rows[-EQ_WINDOW:]
    riders = sum(r["ridership"] for r in tail)
    wait = sum(r["mean_wait_s"] * r["ridership"] for r in tail) / riders / 60 if riders else math.nan
    fleet = np.array([r["fleet_size"] for r in rows[-VAR_WINDOW:]], dtype=float)
    return {
        "ridership": float(np.mean([r["ridership"] for r in tail])),
        "mean_wait_min": wait,
        "final_fleet": float(rows[-1]["fleet_size"]),
        "fleet_var": float(fleet.var()),
        "profit": float(np.mean([r["profit"] for r in tail])),
        "consumer_surplus": float(np.mean([r["consumer_surplus"] for r in tail])),
    }


def read_metrics(path: Path) -> dict[str, dict[int, list[dict]]]:
    """metrics.csv grouped as {scenario: {replication: [day rows]}} in file order."""
    out: dict[str, dict[int, list[dict]]] = {}
    with path.open(newline="") as fh:
        for raw in csv.DictReader(fh):
            row = {k: (v if k == "scenario" else float(v)) for k, v in raw.items()}
            for k in ("replication", "day", "ridership", "fleet_size"):
                row[k] = int(row[k])
            out.setdefault(row["scenario"], {}).setdefault(row["replication"], []).append(row)
    return out


def _delta(x: float, base: float) -> float:
    if not (math.isfinite(x) and math.isfinite(base)) or base == 0:
        return math.nan
    return 100.0 * (x - base) / abs(base)


def _nanstat(fn, a: np.ndarray) -> float:
    # replications without riders have no wait; skip them
    a = a[~np.isnan(a)]
    return float(fn(a)) if len(a) else math.nan


def summarize(results_dir: str | Path) -> list[dict]:
    """Cross-scenario table from ``metrics.csv``: replication mean/min/max and deltas vs. the base case.

    Deltas are percentages of the base-case replication mean; they are blank
    when no scenario is labelled as the base case. Mean wait ignores
    replications that carried nobody over the equilibrium window.
    """
    path = Path(results_dir) / "metrics.csv"
    if not path.is_file():
        raise FileNotFoundError(f"no metrics.csv in {results_dir}")
    grouped = read_metrics(path)
    if not grouped:
        raise ValueError(f"{path} has no rows")
    per_scenario = {}
    for label, reps in grouped.items():
        stats = [_replication_stats(reps[r]) for r in sorted(reps)]
        per_scenario[label] = {k: np.array([s[k] for s in stats]) for k in STATS}
    base = per_scenario.get(BASE_LABEL)
    table = []
    for label, arrs in per_scenario.items():
        row: dict[str, object] = {"scenario": label, "replications": len(arrs["ridership"])}
        for k in STATS:
            row[f"{k}_mean"] = _num(_nanstat(np.mean, arrs[k]))
            row[f"{k}_min"] = _num(_nanstat(np.min, arrs[k]))
            row[f"{k}_max"] = _num(_nanstat(np.max, arrs[k]))
        for k, col in (("ridership", "ridership_delta_pct"), ("mean_wait_min", "wait_delta_pct"),
                       ("consumer_surplus", "cs_delta_pct")):
            row[col] = (_num(_delta(_nanstat(np.mean, arrs[k]), _nanstat(np.mean, base[k])))
                        if base is not None else "")
        table.append(row)
    return table


def format_table(table: list[dict]) -> str:
    cols = ["scenario", "ridership_mean", "mean_wait_min_mean", "final_fleet_mean", "fleet_var_mean",
            "profit_mean", "consumer_surplus_mean", "ridership_delta_pct", "wait_delta_pct", "cs_delta_pct"]
    buf = io.StringIO()
    buf.write("  ".join(f"{c:>14.14}" for c in cols) + "\n")
    for row in table:
        cells = []
        for c in cols:
            v = row[c]
            cells.append(f"{v:>14.14}" if c == "scenario" else f"{float(v) if v != '' else math.nan:14.2f}")
        buf.write("  ".join(cells) + "\n")
    return buf.getvalue()


# entry point ----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """Bad flags are configuration errors, so they exit with 1 rather than 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ftsim", description="Flexible transit day-to-day simulator.")
    sub = p.add_subparsers(dest="command")
    run = sub.add_parser("run", help="run scenarios (default command)")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path, help="JSON run configuration")
    src.add_argument("--preset", choices=sorted(PRESETS), help="built-in scenario matrix")
    run.add_argument("--scenario", help="run only the scenario with this label")
    run.add_argument("--days", type=int, help="day horizon (day 0 is extra)")
    run.add_argument("--replications", type=int)
    run.add_argument("--seed", type=int, help="master seed")
    run.add_argument("--out", type=Path, help="output directory")
    run.add_argument("--strict-eq103", action="store_true",
                     help="AV fleet law clamps to [0, M] instead of [1, M]")
    run.add_argument("--jobs", type=int, default=1, help="worker processes for independent cells")
    run.add_argument("--events", choices=("none", "stops", "full"), default="stops",
                     help="event logs: none, stop-level, or stop-level plus every node arrival")
    run.add_argument("-v", "--verbose", action="store_true")
    summ = sub.add_parser("summarize", help="print the cross-scenario table for a results directory")
    summ.add_argument("results_dir", type=Path)
    return p


def cmd_run(args) -> int:
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        cfg = load_config(args.config, args.preset, days=args.days, replications=args.replications,
                          seed=args.seed, scenario=args.scenario, zero_floor=args.strict_eq103,
                          output=args.out)
        if cfg.output is None:
            raise ConfigError("no output directory; pass --out or set 'output' in the config")
        world = check_inputs(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    events = {"none": False, "stops": True, "full": "full"}[args.events]
    try:
        results = run_cells(cfg, world, args.jobs, events)
        write_outputs(cfg.output, cfg, results, bool(events))
        print(format_table(summarize(cfg.output)), end="")
    except Exception as exc:  # noqa: BLE001 - any failure past validation maps to exit 2
        log.exception("run failed")
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


def cmd_summarize(args) -> int:
    try:
        table = summarize(args.results_dir)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(format_table(table), end="")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] not in ("run", "summarize", "-h", "--help"):
        argv.insert(0, "run")
    args = build_parser().parse_args(argv)
    if args.command is None:
        build_parser().print_help()
        return 1
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return cmd_run(args) if args.command == "run" else cmd_summarize(args)


if __name__ == "__main__":
    sys.exit(main())
