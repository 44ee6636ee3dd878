"""Scenario batches, shift-grid experiments and their report files.

A configuration names a layout, a demand model (optionally a separate model
used only for forecasting), initial stocks, a fleet template with named shifts
and a grid over vehicle counts per shift. Every cell of a grid is simulated on
the same scenario seeds ``seed, seed + 1, ...`` so cells can be compared
scenario by scenario.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .demand import RNG_ALGORITHM, demand_from_dict, forecast_curves, sample_scenario
from .instances import BUNDLED, load_bundled_docs, shift_fleet
from .model import fleet_from_dict, layout_from_dict, validate_setting
from .optimizer import PlanningModel, Reoptimizer
from .simulator import SimulationParams, run_scenario

__all__ = [
    "BatchError",
    "BatchReport",
    "CellReport",
    "ConfigError",
    "EmptyGrid",
    "ExperimentConfig",
    "GridReport",
    "Inputs",
    "emit_batch",
    "emit_reports",
    "grid_cells",
    "load_config",
    "load_manifest",
    "run_batch",
    "run_grid",
]

METRICS = ("empty_hours", "full_hours", "total_hours", "missed_rentals", "missed_returns")


class ConfigError(ValueError):
    pass


class EmptyGrid(ConfigError):
    pass


class BatchError(RuntimeError):
    def __init__(self, index, seed, cause):
        super().__init__(f"scenario {index} (seed {seed}) failed: {cause!r}")
        self.index = index
        self.seed = seed
        self.cause = cause


# --- inputs -------------------------------------------------------------------------


def _read_doc(ref, base, kind):
    """A document given inline (dict), as ``bundled:<name>``, or as a path."""
    if isinstance(ref, dict):
        return ref
    if not isinstance(ref, str):
        raise ConfigError(f"{kind}: expected a path, 'bundled:<name>' or an inline document")
    if ref.startswith("bundled:"):
        name = ref.split(":", 1)[1]
        if name not in BUNDLED:
            raise ConfigError(f"{kind}: unknown bundled instance {name!r}; choose from {BUNDLED}")
        docs = dict(zip(("layout", "demand", "stocks"), load_bundled_docs(name)))
        if kind not in docs:
            raise ConfigError(f"bundled instances provide layout, demand and stocks, not {kind}")
        return docs[kind]
    path = Path(ref)
    if not path.is_absolute():
        path = Path(base) / path
    try:
        return json.loads(path.read_text())
    except OSError as e:
        raise ConfigError(f"{kind}: cannot read {path}: {e.strerror}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{kind}: {path} is not valid JSON: {e}") from e


def stocks_from_doc(doc, layout):
    """Initial stocks as an int array indexed by station id (slot 0 unused).

    Accepts ``{"stocks": {"<id>": n, ...}}`` or ``{"stocks": [n_1, ..., n_n]}``.
    """
    raw = doc["stocks"] if isinstance(doc, dict) and "stocks" in doc else doc
    out = np.zeros(layout.n + 1, dtype=np.int64)
    if isinstance(raw, dict):
        ids = sorted(int(k) for k in raw)
        if ids != list(range(1, layout.n + 1)):
            raise ConfigError("stocks: need exactly one entry per station id 1..n")
        for k, v in raw.items():
            out[int(k)] = int(v)
    else:
        if len(raw) != layout.n:
            raise ConfigError(f"stocks: expected {layout.n} values, got {len(raw)}")
        out[1:] = [int(v) for v in raw]
    bad = [i for i in range(1, layout.n + 1) if not 0 <= out[i] <= layout.capacities[i]]
    if bad:
        raise ConfigError(f"stocks: outside capacity at stations {bad}")
    return out


@dataclass
class Inputs:
    """Parsed inputs shared by every cell and scenario of an experiment."""

    layout: object
    demand: object
    forecast: object
    stocks: np.ndarray

    @classmethod
    def from_docs(cls, layout_doc, demand_doc, stocks_doc, forecast_doc=None):
        try:
            layout = layout_from_dict(layout_doc)
            demand = demand_from_dict(demand_doc, layout.horizon)
            forecast = demand_from_dict(forecast_doc, layout.horizon) if forecast_doc else demand
        except (KeyError, TypeError) as e:
            raise ConfigError(f"malformed input document: missing or bad field {e}") from e
        for name, model in (("demand", demand), ("forecast", forecast)):
            ids = sorted(model.stations)
            if ids != list(range(1, layout.n + 1)):
                raise ConfigError(f"{name} model covers stations {ids[:5]}..., layout has 1..{layout.n}")
        return cls(layout, demand, forecast, stocks_from_doc(stocks_doc, layout))


# --- configuration --------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Everything needed to rerun an experiment; see :func:`load_config`.

    ``docs`` holds the input documents themselves (layout, demand, forecast,
    stocks), so the configuration is self-contained once loaded.
    """

    docs: dict
    scenarios: int = 100
    seed: int = 0
    vehicle_capacity: int = 14
    shifts: dict = field(default_factory=dict)
    slots: list = field(default_factory=list)  # [{"shift": name, "counts": [lo, hi]}]
    max_total: int | None = None
    full_grid: bool = False
    bin_minutes: int = 30
    service_time: int = 60
    depot_pool: int = 10**9
    lookahead: int | None = 7200
    idle_recheck: int = 900
    workers: int = 1

    def __post_init__(self):
        if int(self.scenarios) < 1:
            raise ConfigError("scenarios must be at least 1")
        if int(self.bin_minutes) < 1:
            raise ConfigError("bin_minutes must be at least 1")
        if self.vehicle_capacity < 1:
            raise ConfigError("vehicle capacity must be positive")
        for name, sh in self.shifts.items():
            if len(sh) != 2 or not 0 <= sh[0] < sh[1]:
                raise ConfigError(f"shift {name!r} must be [start_s, end_s] with 0 <= start < end")
        for slot in self.slots:
            if slot["shift"] not in self.shifts:
                raise ConfigError(f"grid slot uses unknown shift {slot['shift']!r}")
            lo, hi = slot["counts"]
            if not 0 <= lo <= hi:
                raise ConfigError(f"grid slot {slot['shift']!r}: counts must be 0 <= lo <= hi")
        if len(self.slots) > 2:
            raise ConfigError("grids have one or two shift slots")

    @property
    def shift_list(self):
        return [tuple(self.shifts[s["shift"]]) for s in self.slots]

    @property
    def bin_width(self):
        return int(self.bin_minutes) * 60

    @property
    def seeds(self):
        return [int(self.seed) + k for k in range(int(self.scenarios))]

    def params(self):
        return SimulationParams(
            service_time=int(self.service_time),
            depot_pool=int(self.depot_pool),
            bin_width=self.bin_width,
            idle_recheck=int(self.idle_recheck),
        )

    def inputs(self):
        d = self.docs
        inp = Inputs.from_docs(d["layout"], d["demand"], d["stocks"], d.get("forecast"))
        for name, (a, b) in self.shifts.items():
            if b > inp.layout.horizon:
                raise ConfigError(f"shift {name!r} ends after the horizon")
        return inp

    def to_dict(self):
        return {
            "inputs": self.docs,
            "scenarios": int(self.scenarios),
            "seed": int(self.seed),
            "fleet": {"capacity": int(self.vehicle_capacity), "shifts": {k: list(v) for k, v in self.shifts.items()}},
            "grid": {"slots": self.slots, "max_total": self.max_total, "full": bool(self.full_grid)},
            "bin_minutes": int(self.bin_minutes),
            "service_time_s": int(self.service_time),
            "depot_pool": int(self.depot_pool),
            "planning": {"lookahead_s": self.lookahead, "idle_recheck_s": int(self.idle_recheck)},
        }

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def fleet(self, counts):
        """Fleet with ``counts[k]`` vehicles on grid slot ``k``."""
        return fleet_from_dict(shift_fleet(counts, self.shift_list, self.vehicle_capacity))


def config_from_dict(doc, base="."):
    """Parse a configuration document; relative paths resolve against ``base``.

    Keys: ``layout``, ``demand``, ``stocks`` and optional ``forecast`` (paths,
    ``bundled:<name>`` or inline documents); ``scenarios``; ``seed``;
    ``fleet = {capacity, shifts: {name: [start_s, end_s]}}``;
    ``grid = {slots: [{shift, counts: [lo, hi]}], max_total, full}``;
    ``bin_minutes``; ``service_time_s``; ``depot_pool``;
    ``planning = {lookahead_s, idle_recheck_s}``; ``workers``.
    A manifest's ``inputs`` block may replace the four input keys.
    """
    if "inputs" in doc:
        docs = copy.deepcopy(doc["inputs"])
    else:
        missing = [k for k in ("layout", "demand", "stocks") if k not in doc]
        if missing:
            raise ConfigError(f"config lacks {missing}")
        docs = {k: _read_doc(doc[k], base, k) for k in ("layout", "demand", "stocks")}
        docs["forecast"] = _read_doc(doc["forecast"], base, "forecast") if doc.get("forecast") else None
    fleet = doc.get("fleet", {})
    grid = doc.get("grid", {})
    planning = doc.get("planning", {})
    slots = [{"shift": s["shift"], "counts": [int(c) for c in s["counts"]]} for s in grid.get("slots", [])]
    try:
        return ExperimentConfig(
            docs=docs,
            scenarios=int(doc.get("scenarios", 100)),
            seed=int(doc.get("seed", 0)),
            vehicle_capacity=int(fleet.get("capacity", 14)),
            shifts={k: [int(x) for x in v] for k, v in fleet.get("shifts", {}).items()},
            slots=slots,
            max_total=grid.get("max_total"),
            full_grid=bool(grid.get("full", False)),
            bin_minutes=int(doc.get("bin_minutes", 30)),
            service_time=int(doc.get("service_time_s", 60)),
            depot_pool=int(doc.get("depot_pool", 10**9)),
            lookahead=planning.get("lookahead_s", 7200),
            idle_recheck=int(planning.get("idle_recheck_s", 900)),
            workers=int(doc.get("workers", 1)),
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"malformed config: {e}") from e


def load_config(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    return config_from_dict(doc, base=path.parent)


def load_manifest(path):
    """Configuration embedded in a manifest written by :func:`emit_reports`."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read manifest {path}: {e}") from e
    if "config" not in doc:
        raise ConfigError(f"{path} is not a run manifest")
    return config_from_dict(doc["config"])


# --- batches -------------------------------------------------------------------------


def _std(x):
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


@dataclass
class BatchReport:
    """Scenario-level rows and their aggregates for one fleet.

    Hours are accumulated in integer seconds so ``total = empty + full`` holds
    per scenario exactly; means and (sample) standard deviations are over
    scenarios.
    """

    seeds: list
    empty_seconds: np.ndarray  # per scenario
    full_seconds: np.ndarray
    missed_rentals: np.ndarray
    missed_returns: np.ndarray
    binned: np.ndarray  # (scenarios, bins, 2) miss counts
    bin_width: int

    @property
    def n(self):
        return len(self.seeds)

    def values(self, metric):
        if metric == "empty_hours":
            return self.empty_seconds / 3600.0
        if metric == "full_hours":
            return self.full_seconds / 3600.0
        if metric == "total_hours":
            return (self.empty_seconds + self.full_seconds) / 3600.0
        if metric == "missed_rentals":
            return self.missed_rentals.astype(float)
        if metric == "missed_returns":
            return self.missed_returns.astype(float)
        raise KeyError(metric)

    def mean(self, metric):
        return float(np.mean(self.values(metric)))

    def std(self, metric):
        return _std(self.values(metric))

    def binned_mean(self):
        """``(bins, 2)`` mean missed rentals and returns per bin."""
        return self.binned.mean(axis=0)

    def summary(self):
        out = {}
        for m in METRICS:
            out[m] = {"mean": self.mean(m), "std": self.std(m)}
        return out

    def to_dict(self):
        return {
            "scenarios": self.n,
            "summary": self.summary(),
            "per_scenario": [
                {
                    "seed": s,
                    "empty_hours": float(e) / 3600.0,
                    "full_hours": float(f) / 3600.0,
                    "total_hours": float(e + f) / 3600.0,
                    "missed_rentals": int(r),
                    "missed_returns": int(q),
                }
                for s, e, f, r, q in zip(
                    self.seeds, self.empty_seconds, self.full_seconds, self.missed_rentals, self.missed_returns
                )
            ],
        }

    def binned_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_start_s", "missed_rentals", "missed_returns", "total"])
        for b, (r, q) in enumerate(self.binned_mean()):
            w.writerow([b * self.bin_width, repr(float(r)), repr(float(q)), repr(float(r + q))])
        return buf.getvalue()


class _Runner:
    """Per-process cache of parsed inputs, planning arrays and scenarios."""

    def __init__(self, config):
        self.config = config
        self.inputs = config.inputs()
        self.params = config.params()
        self.model = PlanningModel(
            self.inputs.layout, forecast_curves(self.inputs.forecast), service_time=self.params.service_time
        )
        self._scenarios = {}

    def scenario(self, seed):
        if seed not in self._scenarios:
            self._scenarios[seed] = sample_scenario(self.inputs.demand, seed)
        return self._scenarios[seed]

    def batch(self, fleet, record=None):
        setting = validate_setting(self.inputs.layout, fleet)
        cfg = self.config
        rows = []
        binned = []
        for idx, seed in enumerate(cfg.seeds):
            try:
                policy = Reoptimizer(self.model, lookahead=cfg.lookahead) if len(fleet) else None
                rep = run_scenario(setting, self.inputs.stocks, self.scenario(seed), policy, self.params, seed=seed)
            except Exception as e:  # noqa: BLE001 - re-raised with the scenario index
                raise BatchError(idx, seed, e) from e
            if record is not None:
                record(idx, rep, policy)
            rows.append((int(rep.empty_seconds.sum()), int(rep.full_seconds.sum()), rep.missed_rentals, rep.missed_returns))
            binned.append(rep.binned_misses(cfg.bin_width))
        a = np.array(rows, dtype=np.int64).reshape(-1, 4)
        return BatchReport(
            seeds=cfg.seeds,
            empty_seconds=a[:, 0],
            full_seconds=a[:, 1],
            missed_rentals=a[:, 2],
            missed_returns=a[:, 3],
            binned=np.array(binned),
            bin_width=cfg.bin_width,
        )


def run_batch(config, fleet, record=None):
    """Simulate ``fleet`` on the configuration's scenario seeds.

    ``record(index, ScenarioReport, policy)`` is called after each scenario
    when given. Raises :class:`BatchError` naming the failing scenario.
    """
    return _Runner(config).batch(fleet, record)


# --- grids ---------------------------------------------------------------------------


def grid_cells(config):
    """Vehicle-count tuples of the grid, row-major (slot 1 outer)."""
    if not config.slots:
        raise EmptyGrid("the grid has no shift slots")
    ranges = [range(s["counts"][0], s["counts"][1] + 1) for s in config.slots]
    cells = [()]
    for r in ranges:
        cells = [c + (k,) for c in cells for k in r]
    if config.max_total is not None and not config.full_grid:
        cells = [c for c in cells if sum(c) <= config.max_total]
    if not cells:
        raise EmptyGrid("no grid cell satisfies the vehicle limit")
    return cells


@dataclass
class CellReport:
    counts: tuple
    batch: BatchReport

    @property
    def label(self):
        return "_".join(f"{s}{c}" for s, c in zip("ma", self.counts)) if len(self.counts) <= 2 else "_".join(map(str, self.counts))

    def to_dict(self):
        d = {"counts": list(self.counts)}
        d.update(self.batch.to_dict())
        return d


@dataclass
class GridReport:
    config: ExperimentConfig
    cells: list  # of CellReport, in grid_cells order

    def cell(self, counts):
        for c in self.cells:
            if c.counts == tuple(counts):
                return c
        raise KeyError(counts)

    def mean_table(self, metric):
        return {c.counts: c.batch.mean(metric) for c in self.cells}

    @property
    def metadata(self):
        return {
            "seed": int(self.config.seed),
            "scenarios": int(self.config.scenarios),
            "config_digest": self.config.digest(),
            "rng": RNG_ALGORITHM,
        }


_WORKER = None


def _init_worker(config_dict):
    global _WORKER
    _WORKER = _Runner(config_from_dict(config_dict))


def _run_cell(counts):
    return _WORKER.batch(_WORKER.config.fleet(counts))


def run_grid(config, workers=None):
    """Run every grid cell on the shared scenario seeds.

    Cells are independent and may run in ``workers`` processes; results are
    assembled in grid order so the output does not depend on scheduling.
    """
    cells = grid_cells(config)
    workers = int(workers or config.workers or 1)
    if workers <= 1 or len(cells) == 1:
        runner = _Runner(config)
        batches = [runner.batch(config.fleet(c)) for c in cells]
    else:
        config.inputs()  # fail fast on bad inputs before spawning workers
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(config.to_dict(),)) as ex:
            batches = list(ex.map(_run_cell, cells))
    return GridReport(config, [CellReport(c, b) for c, b in zip(cells, batches)])


# --- report files ----------------------------------------------------------------------


def _fmt(x):
    return repr(float(x))


def grid_csv(report, metric):
    """Triangular table: first column slot-1 count, header row slot-2 counts;
    blank where the cell is not part of the grid."""
    cfg = report.config
    table = report.mean_table(metric)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if len(cfg.slots) == 1:
        name = cfg.slots[0]["shift"]
        w.writerow([name, metric])
        for (m,), v in sorted(table.items()):
            w.writerow([m, _fmt(v)])
        return buf.getvalue()
    s1, s2 = cfg.slots
    cols = list(range(s2["counts"][0], s2["counts"][1] + 1))
    w.writerow([f"{s1['shift']}\\{s2['shift']}"] + cols)
    for m in range(s1["counts"][0], s1["counts"][1] + 1):
        w.writerow([m] + [_fmt(table[(m, a)]) if (m, a) in table else "" for a in cols])
    return buf.getvalue()


def summary_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = [s["shift"] for s in report.config.slots]
    for m in METRICS:
        head += [f"{m}_mean", f"{m}_std"]
    w.writerow(head)
    for c in report.cells:
        row = list(c.counts)
        for m in METRICS:
            row += [_fmt(c.batch.mean(m)), _fmt(c.batch.std(m))]
        w.writerow(row)
    return buf.getvalue()


def _versions():
    import numba

    return {
        "bikesim": __version__,
        "numpy": np.__version__,
        "numba": numba.__version__,
        "python": platform.python_version(),
    }


def _write_all(out, files):
    out = Path(out)
    written = {}
    for rel, text in files.items():
        path = out / rel
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        except OSError as e:
            raise OSError(e.errno, f"cannot write {path}: {e.strerror}") from e
        written[rel] = hashlib.sha256(text.encode()).hexdigest()
    return written


def _dump(doc):
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def emit_reports(report, out):
    """Write grid tables, per-cell documents and miss series, and the manifest.

    Files (under ``out``): ``grid_<metric>.csv`` for each metric,
    ``grid_summary.csv`` (means and standard deviations per cell),
    ``cells/<label>.json``, ``cells/<label>_misses.csv`` and
    ``manifest.json``. Returns the written paths relative to ``out``.
    Output bytes depend only on the configuration.
    """
    files = {}
    for m in METRICS:
        files[f"grid_{m}.csv"] = grid_csv(report, m)
    files["grid_summary.csv"] = summary_csv(report)
    for c in report.cells:
        files[f"cells/{c.label}.json"] = _dump(c.to_dict())
        files[f"cells/{c.label}_misses.csv"] = c.batch.binned_csv()
    digests = _write_all(out, files)
    manifest = {
        "kind": "grid",
        "config": report.config.to_dict(),
        "metadata": report.metadata,
        "seeds": report.config.seeds,
        "cells": [list(c.counts) for c in report.cells],
        "versions": _versions(),
        "files": digests,
    }
    _write_all(out, {"manifest.json": _dump(manifest)})
    return sorted(files) + ["manifest.json"]


def emit_batch(config, batch, out, counts=None, fleet=None):
    """Write one batch: ``batch.json``, ``misses.csv`` and ``manifest.json``."""
    files = {
        "batch.json": _dump(batch.to_dict()),
        "misses.csv": batch.binned_csv(),
    }
    digests = _write_all(out, files)
    manifest = {
        "kind": "batch",
        "config": config.to_dict(),
        "counts": list(counts) if counts is not None else None,
        "fleet": fleet,
        "metadata": {"seed": int(config.seed), "scenarios": int(config.scenarios),
                     "config_digest": config.digest(), "rng": RNG_ALGORITHM},
        "seeds": config.seeds,
        "versions": _versions(),
        "files": digests,
    }
    _write_all(out, {"manifest.json": _dump(manifest)})
    return sorted(files) + ["manifest.json"]
