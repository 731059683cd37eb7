import csv
import json
import logging
import math

import numpy as np
import pytest

from densim import theory
from densim.experiment import (DecaySeries, SimConfig, asymptotic_error, compare_to_theory,
                               derive_seed, run_simulation, sweep, theory_row, write_sweep_outputs)

SMALL = SimConfig(rows=8, cols=8, n_people=20, n_sensors=4, steps=300, tail=50)


def test_config_validation_and_json(tmp_path):
    with pytest.raises(ValueError):
        SimConfig(p=1.2)
    with pytest.raises(ValueError):
        SimConfig(lam=-0.1)
    with pytest.raises(ValueError):
        SimConfig(steps=0)
    with pytest.raises(ValueError):
        SimConfig.from_dict({"bogus": 1})
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"rows": 5, "lambda": 0.2}))
    cfg = SimConfig.from_json(path)
    assert (cfg.rows, cfg.lam) == (5, 0.2)
    assert SimConfig.from_dict(cfg.to_dict()) == cfg


def test_asymptotic_examples(caplog):
    assert asymptotic_error(np.full(500, 0.3)) == pytest.approx(0.3)
    assert asymptotic_error(np.r_[np.full(800, 1.0), np.full(200, 0.2)]) == pytest.approx(0.2)
    vals = np.linspace(0, 1, 100)
    with caplog.at_level(logging.WARNING):
        assert asymptotic_error(vals, tail=200) == pytest.approx(vals.mean())
    assert "fewer than tail" in caplog.text
    with pytest.raises(ValueError):
        asymptotic_error(np.array([]))


def test_run_is_deterministic():
    a, b = run_simulation(SMALL), run_simulation(SMALL)
    assert np.array_equal(a.series.errors, b.series.errors)
    assert np.array_equal(a.psi, b.psi) and np.array_equal(a.phi, b.phi)
    c = run_simulation(SimConfig(**{**SMALL.__dict__, "seed": 1}))
    assert not np.array_equal(a.series.errors, c.series.errors)


def test_run_series_shape_and_range():
    cfg = SimConfig(**{**SMALL.__dict__, "stride": 7})
    res = run_simulation(cfg)
    assert len(res.series) == 300 // 7
    assert res.series.steps.tolist() == list(range(7, 300, 7))
    assert np.all(np.diff(res.series.samples) > 0)
    assert np.all((0 <= res.series.errors) & (res.series.errors <= 1))
    assert res.phi.sum() == pytest.approx(cfg.n_people)


def test_perfect_static_coverage_is_exact():
    # one sensor per node, zero radius, perfect detection: psi equals phi at every tick
    cfg = SimConfig(rows=4, cols=4, n_people=10, n_sensors=400, radius=0.0, p=1.0, lam=0.0, steps=30, tail=10)
    res = run_simulation(cfg)
    assert res.series.errors.max() < 0.2
    assert np.all(res.field.sensed_samples > 0)


def test_flat_sensor_limit():
    cfg = SimConfig(rows=6, cols=6, n_people=30, n_sensors=8, p=0.0, lam=0.5, steps=3000, tail=200)
    res = run_simulation(cfg)
    sampled = res.field.sensed_samples > 0
    oracle = theory.normalized_error(cfg.lam * sampled, res.phi)
    assert abs(asymptotic_error(res.series) - oracle) <= 0.03


def test_derive_seed_independent_of_order():
    a = derive_seed(7, 1, 2, 3).generate_state(4)
    assert np.array_equal(a, derive_seed(7, 1, 2, 3).generate_state(4))
    assert not np.array_equal(a, derive_seed(7, 2, 1, 3).generate_state(4))


def test_one_cell_sweep_matches_composition():
    table = sweep(SMALL, [0.5], [0.3], 1, seed_root=11)
    cell, = table.cells
    direct = run_simulation(SimConfig(**{**SMALL.__dict__, "p": 0.5, "lam": 0.3}), derive_seed(11, 0, 0, 0))
    assert np.array_equal(cell.runs[0].errors, direct.series.errors)
    assert cell.asymptotic_mean == asymptotic_error(direct.series, SMALL.tail)
    assert cell.asymptotic_std == 0.0 and cell.n_runs == 1


def test_sweep_averages_curves_first():
    table = sweep(SMALL, [1.0], [0.0, 0.4], 3, seed_root=5)
    for cell in table.cells:
        curve = np.mean([s.errors for s in cell.runs], axis=0)
        assert cell.asymptotic_mean == pytest.approx(curve[-SMALL.tail:].mean(), abs=1e-15)
        per_run = [s.errors[-SMALL.tail:].mean() for s in cell.runs]
        assert cell.asymptotic_std == pytest.approx(np.std(per_run, ddof=1))
    assert table.cell(1.0, 0.4).lam == 0.4


def test_parallel_equals_sequential():
    seq = sweep(SMALL, [0.5, 1.0], [0.0, 0.3], 2, seed_root=3, workers=1)
    par = sweep(SMALL, [0.5, 1.0], [0.0, 0.3], 2, seed_root=3, workers=2)
    for a, b in zip(seq.cells, par.cells):
        assert a.asymptotic_mean == b.asymptotic_mean
        for ra, rb in zip(a.runs, b.runs):
            assert np.array_equal(ra.errors, rb.errors)


def test_theory_row():
    row = theory_row(0.5, 0.3, 0.5, 1.2)
    assert row["closed_form"] == theory.closed_form_error(0.5, 0.6, 1.2)
    assert row["bound_loose"] == pytest.approx(0.3)
    flat = theory_row(0.0, 0.3, 0.5, 1.2)
    assert flat["bound_loose"] is None
    d = math.sqrt(1.2**2 - 1)  # (1+d, 1-d) has shape parameter 1.2
    assert flat["closed_form"] == pytest.approx(theory.normalized_error([1.0, 1.0], [1 + d, 1 - d]), abs=1e-12)
    assert theory_row(0.0, 0.0, 0.5, 1.2)["closed_form"] == 1.0


def test_report_schema_and_outputs(tmp_path):
    table = sweep(SMALL, [0.0, 1.0], [0.0, 0.3], 2, seed_root=1)
    report = compare_to_theory(table)
    assert set(report) == {"config", "runs_per_cell", "seed_root", "cells", "n_exceeding_bound"}
    keys = {"p", "lambda", "n_runs", "asymptotic_mean", "asymptotic_std", "sem", "h", "c",
            "closed_form", "bound_tight", "bound_loose", "exceeds_bound"}
    assert all(set(r) == keys for r in report["cells"])
    lam0 = [r for r in report["cells"] if r["p"] == 1.0 and r["lambda"] == 0.0][0]
    assert lam0["closed_form"] == 0.0
    write_sweep_outputs(table, report, tmp_path)
    assert len(list(tmp_path.glob("decay_*.csv"))) == 8
    with open(tmp_path / "decay_1-1_0.csv") as fh:
        assert next(csv.reader(fh)) == ["step", "cumulative_samples", "error"]
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["p", "lambda", "asymptotic_mean", "asymptotic_std", "n_runs",
                             "closed_form", "bound_tight", "bound_loose"]
    assert len(rows) == 4 and rows[0]["bound_loose"] == ""
    back = json.loads((tmp_path / "report.json").read_text())
    assert back["cells"][3]["bound_loose"] == pytest.approx(report["cells"][3]["bound_loose"])
    series = DecaySeries.read_csv(tmp_path / "decay_1-1_0.csv")
    assert np.array_equal(series.errors, table.cells[3].runs[0].errors)


def test_sweep_records_cell_failure(tmp_path):
    bad = SimConfig(graph_file=str(tmp_path / "missing.csv"), steps=5, tail=5)
    table = sweep(bad, [0.5], [0.1], 1, seed_root=0)
    assert table.cells[0].error is not None
    assert math.isnan(table.cells[0].asymptotic_mean)
    assert "error" in compare_to_theory(table)["cells"][0]
