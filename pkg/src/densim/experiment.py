"""Seeded simulation runs, (p, lambda) sweeps and comparison against theory.

Random streams
--------------
Every run draws from ``numpy.random.PCG64`` generators seeded through
``numpy.random.SeedSequence(entropy=seed_root, spawn_key=(i_p, i_lam, i_run))``.
A run spawns two children from its sequence: the first drives mobility, the
second drives sensing. Because seeds depend only on indices, runs may execute
in any order or process and still produce identical results.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import theory
from .mobility import PERSON, init_population, step_agent
from .sensing import DensityField, SensingParams, record_step, snapshot
from .world_graph import WorldGraph, build_grid_world, load_graph, load_grid

log = logging.getLogger(__name__)

_CONFIG_ALIASES = {"lambda": "lam"}


@dataclass(frozen=True)
class SimConfig:
    rows: int = 40
    cols: int = 40
    obstacle_file: str | None = None
    graph_file: str | None = None
    n_people: int = 200
    n_sensors: int = 20
    v_person: int = 1
    v_sensor: int = 3
    radius: float = 1.0
    p: float = 0.5
    lam: float = 0.3
    steps: int = 5000
    coarsen: int = 1
    seed: int = 0
    stride: int = 1
    tail: int = 200

    def __post_init__(self):
        if self.n_people < 0 or self.n_sensors < 0:
            raise ValueError("agent counts must be non-negative")
        if self.v_person < 1 or self.v_sensor < 1:
            raise ValueError("speeds must be >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.stride < 1 or self.tail < 1:
            raise ValueError("stride and tail must be >= 1")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        if self.coarsen < 1:
            raise ValueError("coarsen must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.graph_file is None and self.obstacle_file is None and (self.rows < 1 or self.cols < 1):
            raise ValueError("grid dimensions must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            name = _CONFIG_ALIASES.get(key, key)
            if name not in known:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[name] = value
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


@lru_cache(maxsize=8)
def _world(rows: int, cols: int, obstacle_file: str | None, graph_file: str | None) -> WorldGraph:
    if graph_file is not None:
        return load_graph(graph_file)
    if obstacle_file is not None:
        return load_grid(obstacle_file)
    return build_grid_world(rows, cols)


def build_world(cfg: SimConfig) -> WorldGraph:
    return _world(cfg.rows, cfg.cols, cfg.obstacle_file, cfg.graph_file)


@dataclass
class DecaySeries:
    steps: np.ndarray
    samples: np.ndarray
    errors: np.ndarray

    def __len__(self):
        return len(self.errors)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "cumulative_samples", "error"])
            for s, k, e in zip(self.steps.tolist(), self.samples.tolist(), self.errors.tolist()):
                w.writerow([s, k, repr(e)])

    @classmethod
    def read_csv(cls, path) -> "DecaySeries":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0].astype(np.int64), data[:, 1].astype(np.int64), data[:, 2])


@dataclass
class RunResult:
    series: DecaySeries
    psi: np.ndarray
    phi: np.ndarray
    field: DensityField = field(repr=False)


def run_simulation(cfg: SimConfig, seed: np.random.SeedSequence | None = None) -> RunResult:
    """One seeded run; error is recorded every ``cfg.stride`` ticks."""
    g = build_world(cfg)
    if seed is None:
        seed = np.random.SeedSequence(cfg.seed)
    mob_seed, sense_seed = seed.spawn(2)
    mob_rng = np.random.Generator(np.random.PCG64(mob_seed))
    sense_rng = np.random.Generator(np.random.PCG64(sense_seed))

    agents = init_population(g, cfg.n_people, cfg.n_sensors, cfg.v_person, cfg.v_sensor, mob_rng)
    people = [a for a in agents if a.kind == PERSON]
    sensors = [a for a in agents if a.kind != PERSON]
    params = SensingParams(cfg.p, cfg.lam, cfg.radius)
    dens = DensityField(g, cfg.coarsen)

    n_rows = cfg.steps // cfg.stride
    steps = np.empty(n_rows, dtype=np.int64)
    samples = np.empty(n_rows, dtype=np.int64)
    errors = np.empty(n_rows)
    row = 0
    for t in range(1, cfg.steps + 1):
        for a in agents:
            step_agent(a, g, mob_rng)
        record_step(dens, sensors, people, params, sense_rng)
        if t % cfg.stride == 0:
            psi, phi = snapshot(dens)
            steps[row] = t
            samples[row] = dens.total_samples
            errors[row] = theory.normalized_error(psi, phi)
            row += 1
    psi, phi = snapshot(dens)
    return RunResult(DecaySeries(steps, samples, errors), psi, phi, dens)


def asymptotic_error(series: DecaySeries | np.ndarray, tail: int = 200) -> float:
    """Mean of the last ``tail`` error values."""
    errors = series.errors if isinstance(series, DecaySeries) else np.asarray(series, dtype=float)
    if len(errors) == 0:
        raise ValueError("empty decay series")
    if len(errors) < tail:
        log.warning("series has %d values, fewer than tail=%d; averaging all", len(errors), tail)
    return float(np.mean(errors[-tail:]))


# -- sweeps -------------------------------------------------------------------

def derive_seed(seed_root: int, *indices: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed_root, spawn_key=tuple(int(i) for i in indices))


@dataclass
class SweepCell:
    i_p: int
    i_lam: int
    p: float
    lam: float
    asymptotic_mean: float = math.nan
    asymptotic_std: float = math.nan
    n_runs: int = 0
    h: float = math.nan
    c: float = math.nan
    mean_curve: DecaySeries | None = field(default=None, repr=False)
    runs: list[DecaySeries] = field(default_factory=list, repr=False)
    error: str | None = None

    @property
    def sem(self) -> float:
        return self.asymptotic_std / math.sqrt(self.n_runs) if self.n_runs else math.nan


@dataclass
class SweepTable:
    cells: list[SweepCell]
    base: SimConfig
    runs_per_cell: int
    seed_root: int

    def cell(self, p: float, lam: float) -> SweepCell:
        for c in self.cells:
            if math.isclose(c.p, p) and math.isclose(c.lam, lam):
                return c
        raise KeyError((p, lam))


def _sweep_job(args):
    cfg, seed_root, key = args
    try:
        res = run_simulation(cfg, derive_seed(seed_root, *key))
    except Exception as exc:  # recorded against the cell, not fatal to the sweep
        return key, None, None, f"{type(exc).__name__}: {exc}"
    return key, res.series, res.phi, None


def sweep(base_cfg: SimConfig, p_values, lambda_values, runs_per_cell: int,
          seed_root: int, workers: int = 1) -> SweepTable:
    """Run every (p, lambda) cell ``runs_per_cell`` times.

    The per-cell asymptotic value is the tail mean of the run-averaged decay
    curve; ``asymptotic_std`` is the spread of per-run tail means.
    """
    p_values = [float(v) for v in p_values]
    lambda_values = [float(v) for v in lambda_values]
    if not p_values or not lambda_values:
        raise ValueError("empty parameter list")
    if runs_per_cell < 1:
        raise ValueError("runs_per_cell must be >= 1")

    jobs = []
    for i, p in enumerate(p_values):
        for j, lam in enumerate(lambda_values):
            cfg = replace(base_cfg, p=p, lam=lam)
            for k in range(runs_per_cell):
                jobs.append((cfg, seed_root, (i, j, k)))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    by_key = {r[0]: r[1:] for r in results}

    cells = []
    for i, p in enumerate(p_values):
        for j, lam in enumerate(lambda_values):
            cell = SweepCell(i, j, p, lam)
            outs = [by_key[(i, j, k)] for k in range(runs_per_cell)]
            errs = [e for _, _, e in outs if e is not None]
            if errs:
                cell.error = errs[0]
                log.error("cell p=%g lambda=%g failed: %s", p, lam, cell.error)
                cells.append(cell)
                continue
            series = [s for s, _, _ in outs]
            curve = np.mean([s.errors for s in series], axis=0)
            cell.mean_curve = DecaySeries(series[0].steps, series[0].samples, curve)
            cell.runs = series
            cell.asymptotic_mean = asymptotic_error(curve, base_cfg.tail)
            per_run = [asymptotic_error(s, base_cfg.tail) for s in series]
            cell.asymptotic_std = float(np.std(per_run, ddof=1)) if len(per_run) > 1 else 0.0
            cell.n_runs = runs_per_cell
            phi = np.mean([f for _, f, _ in outs], axis=0)
            cell.h = theory.mean_density(phi)
            cell.c = theory.shape_c(phi)
            cells.append(cell)
    return SweepTable(cells, base_cfg, runs_per_cell, seed_root)


def theory_row(p: float, lam: float, h: float, c: float) -> dict:
    """Closed form and bounds; p = 0 uses the flat-sensor limit, bounds undefined."""
    if p > 0:
        return {
            "closed_form": theory.closed_form_error(p, lam / h, c),
            "bound_tight": theory.bound_tight(p, lam, h, c),
            "bound_loose": theory.bound_loose(p, lam, h),
        }
    # psi is constant when p = 0: error of a flat vector against phi
    flat = math.sqrt(max(c * c - 1, 0.0)) / (1 + c) if lam > 0 else 1.0
    return {"closed_form": flat, "bound_tight": None, "bound_loose": None}


def compare_to_theory(table: SweepTable, phi=None) -> dict:
    """Measured asymptotic errors next to the closed form and both bounds.

    With ``phi`` given, its ``h`` and ``c`` apply to every cell; otherwise each
    cell uses the run-averaged ground truth of its own runs.
    """
    if phi is not None:
        fixed_h, fixed_c = theory.mean_density(phi), theory.shape_c(phi)
    rows = []
    for cell in table.cells:
        row = {"p": cell.p, "lambda": cell.lam, "n_runs": cell.n_runs}
        if cell.error is not None:
            row["error"] = cell.error
            rows.append(row)
            continue
        h, c = (fixed_h, fixed_c) if phi is not None else (cell.h, cell.c)
        row.update({
            "asymptotic_mean": cell.asymptotic_mean,
            "asymptotic_std": cell.asymptotic_std,
            "sem": cell.sem,
            "h": h,
            "c": c,
        })
        row.update(theory_row(cell.p, cell.lam, h, c))
        loose = row["bound_loose"]
        row["exceeds_bound"] = loose is not None and cell.asymptotic_mean > loose + 3 * cell.sem
        rows.append(row)
    return {
        "config": table.base.to_dict(),
        "runs_per_cell": table.runs_per_cell,
        "seed_root": table.seed_root,
        "cells": rows,
        "n_exceeding_bound": sum(1 for r in rows if r.get("exceeds_bound")),
    }


SWEEP_COLUMNS = ["p", "lambda", "asymptotic_mean", "asymptotic_std", "n_runs",
                 "closed_form", "bound_tight", "bound_loose"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_sweep_outputs(table: SweepTable, report: dict, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for cell in table.cells:
        for k, s in enumerate(cell.runs):
            s.write_csv(out / f"decay_{cell.i_p}-{cell.i_lam}_{k}.csv")
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in report["cells"]:
            w.writerow([_fmt(row.get(col, math.nan)) for col in SWEEP_COLUMNS])
    write_json(report, out / "report.json")


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj
