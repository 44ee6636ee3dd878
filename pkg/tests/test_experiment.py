import json

import numpy as np
import pytest

from bikesim import experiment as ex
from bikesim.demand import sample_scenario
from bikesim.experiment import (
    BatchError,
    ConfigError,
    EmptyGrid,
    config_from_dict,
    emit_batch,
    emit_reports,
    grid_cells,
    load_config,
    load_manifest,
    run_batch,
    run_grid,
)
from bikesim.instances import bundled, load_bundled_docs
from bikesim.model import Fleet, validate_setting
from bikesim.simulator import run_scenario

SHIFTS = {"morning": [25200, 54000], "afternoon": [41400, 70200]}


def config(**over):
    doc = {
        "layout": "bundled:synthetic10",
        "demand": "bundled:synthetic10",
        "stocks": "bundled:synthetic10",
        "scenarios": 3,
        "seed": 40,
        "fleet": {"capacity": 10, "shifts": SHIFTS},
        "grid": {"slots": [{"shift": "morning", "counts": [0, 1]}, {"shift": "afternoon", "counts": [0, 1]}],
                 "max_total": 1},
    }
    doc.update(over)
    return config_from_dict(doc)


def test_single_scenario_batch_equals_report():
    cfg = config(scenarios=1)
    fleet = cfg.fleet((1, 0))
    batch = run_batch(cfg, fleet)
    layout, demand, stocks = bundled("synthetic10")
    from bikesim.demand import forecast_curves
    from bikesim.optimizer import PlanningModel, Reoptimizer
    rep = run_scenario(validate_setting(layout, fleet), stocks, sample_scenario(demand, 40),
                       Reoptimizer(PlanningModel(layout, forecast_curves(demand))), cfg.params(), seed=40)
    assert batch.mean("empty_hours") == rep.total_empty_hours
    assert batch.mean("full_hours") == rep.total_full_hours
    assert batch.mean("total_hours") == rep.total_hours
    assert batch.mean("missed_rentals") == rep.missed_rentals
    assert batch.std("total_hours") == 0.0
    assert np.array_equal(batch.binned_mean(), rep.binned_misses(1800))


def test_paired_seeds_across_fleets():
    cfg = config()
    seen = {}
    for counts in ((0, 0), (1, 0)):
        seen[counts] = []
        run_batch(cfg, cfg.fleet(counts), record=lambda i, rep, pol, c=counts: seen[c].append(rep.seed))
    assert seen[(0, 0)] == seen[(1, 0)] == [40, 41, 42]


def test_mean_total_is_sum_of_means():
    batch = run_batch(config(), config().fleet((1, 0)))
    e = sum(batch.values("empty_hours")) / batch.n
    f = sum(batch.values("full_hours")) / batch.n
    assert batch.mean("total_hours") == pytest.approx(e + f, abs=1e-9)
    assert np.array_equal(batch.empty_seconds + batch.full_seconds,
                          np.rint(batch.values("total_hours") * 3600).astype(np.int64))


def test_std_is_sample_std():
    batch = run_batch(config(), Fleet())
    x = batch.values("total_hours")
    assert batch.std("total_hours") == pytest.approx(np.sqrt(np.sum((x - x.mean()) ** 2) / (len(x) - 1)))


def test_triangular_grid_has_28_cells():
    cfg = config(grid={"slots": [{"shift": "morning", "counts": [0, 6]}, {"shift": "afternoon", "counts": [0, 6]}],
                       "max_total": 6})
    cells = grid_cells(cfg)
    assert len(cells) == 28
    assert cells[:3] == [(0, 0), (0, 1), (0, 2)] and cells[-1] == (6, 0)
    cfg.full_grid = True
    assert len(grid_cells(cfg)) == 49


def test_empty_grid():
    with pytest.raises(EmptyGrid):
        grid_cells(config(grid={"slots": []}))
    with pytest.raises(EmptyGrid):
        grid_cells(config(grid={"slots": [{"shift": "morning", "counts": [2, 3]}], "max_total": 1}))


@pytest.mark.parametrize(
    "over",
    [
        {"scenarios": 0},
        {"bin_minutes": 0},
        {"grid": {"slots": [{"shift": "night", "counts": [0, 1]}]}},
        {"grid": {"slots": [{"shift": "morning", "counts": [2, 1]}]}},
        {"fleet": {"capacity": 10, "shifts": {"morning": [50000, 40000]}}},
        {"layout": "bundled:nowhere"},
    ],
)
def test_invalid_configs(over):
    with pytest.raises(ConfigError):
        config(**over)


def test_invalid_inputs():
    with pytest.raises(ConfigError):
        config(fleet={"capacity": 10, "shifts": {"late": [80000, 90000]}}).inputs()
    with pytest.raises(ConfigError):
        config(stocks={"stocks": [100] * 10}).inputs()
    with pytest.raises(ConfigError):
        config(stocks={"stocks": [1, 2]}).inputs()
    with pytest.raises(ConfigError):
        config_from_dict({"layout": "bundled:synthetic10"})
    with pytest.raises(ConfigError):
        config(layout="does/not/exist.json")


def test_baseline_cell_identical_across_shift_definitions():
    a = run_grid(config())
    b = run_grid(config(fleet={"capacity": 10, "shifts": {"morning": [21600, 36000], "afternoon": [61200, 75600]}}))
    ca, cb = a.cell((0, 0)).batch, b.cell((0, 0)).batch
    assert ca.to_dict() == cb.to_dict()
    assert ca.binned.tobytes() == cb.binned.tobytes()
    assert a.cell((1, 0)).batch.to_dict() != b.cell((1, 0)).batch.to_dict()


def test_grid_cells_satisfy_identity():
    report = run_grid(config())
    for c in report.cells:
        b = c.batch
        assert abs(b.mean("empty_hours") + b.mean("full_hours") - b.mean("total_hours")) <= 1e-9


def test_grid_csv_layout(tmp_path):
    report = run_grid(config())
    emit_reports(report, tmp_path)
    rows = (tmp_path / "grid_total_hours.csv").read_text().splitlines()
    assert rows[0] == "morning\\afternoon,0,1"
    assert rows[1].startswith("0,") and rows[2].startswith("1,")
    assert rows[2].endswith(",")  # (1, 1) exceeds the vehicle limit
    assert float(rows[1].split(",")[1]) == report.cell((0, 0)).batch.mean("total_hours")
    series = (tmp_path / "cells" / "m0_a0_misses.csv").read_text().splitlines()
    assert len(series) == 1 + 48
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["seeds"] == [40, 41, 42]
    assert manifest["metadata"]["rng"].startswith("numpy PCG64")
    assert set(manifest["files"]) >= {"grid_summary.csv", "cells/m1_a0.json"}


def read_tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_rerun_from_manifest_is_byte_identical(tmp_path):
    first = tmp_path / "a"
    emit_reports(run_grid(config()), first)
    cfg = load_manifest(first / "manifest.json")
    emit_reports(run_grid(cfg), tmp_path / "b")
    emit_reports(run_grid(load_manifest(first / "manifest.json"), workers=2), tmp_path / "c")
    a, b, c = read_tree(first), read_tree(tmp_path / "b"), read_tree(tmp_path / "c")
    assert a == b == c


def test_zero_demand_run(tmp_path):
    ldoc, ddoc, sdoc = load_bundled_docs("synthetic10")
    for s in ddoc["stations"]:
        s["return_rates"] = [0.0] * len(s["return_rates"])
        s["rental_rates"] = [0.0] * len(s["rental_rates"])
    sdoc = {"stocks": {k: (0 if k == "3" else v) for k, v in sdoc["stocks"].items()}}
    cfg = config(demand=ddoc, stocks=sdoc)
    report = run_grid(cfg)
    emit_reports(report, tmp_path)
    for c in report.cells:
        assert c.batch.mean("missed_rentals") == c.batch.mean("missed_returns") == 0
        assert np.all(c.batch.binned == 0)
    # station 3 starts empty and nothing relocates without forecast shortages
    assert report.cell((0, 0)).batch.mean("empty_hours") == 24.0
    assert report.cell((0, 0)).batch.mean("full_hours") == 0.0
    rows = (tmp_path / "cells" / "m0_a0_misses.csv").read_text().splitlines()[1:]
    assert all(r.split(",")[1:] == ["0.0", "0.0", "0.0"] for r in rows)


def test_separate_forecast_model_drives_planning():
    _, ddoc, _ = load_bundled_docs("synthetic10")
    for s in ddoc["stations"]:
        s["return_rates"] = [0.0] * len(s["return_rates"])
        s["rental_rates"] = [0.0] * len(s["rental_rates"])
    blind = config(forecast=ddoc)
    base = run_batch(blind, Fleet())
    planned_blind = run_batch(blind, blind.fleet((1, 0)))
    # with a forecast of no demand the vehicle never intervenes
    assert planned_blind.to_dict()["per_scenario"] == base.to_dict()["per_scenario"]
    assert run_batch(config(), config().fleet((1, 0))).to_dict() != base.to_dict()


def test_failing_scenario_aborts_with_index(monkeypatch):
    real = ex.run_scenario

    def flaky(setting, stocks, scenario, *a, seed=None, **k):
        if seed == 41:
            raise RuntimeError("boom")
        return real(setting, stocks, scenario, *a, seed=seed, **k)

    monkeypatch.setattr(ex, "run_scenario", flaky)
    with pytest.raises(BatchError) as e:
        run_batch(config(), Fleet())
    assert (e.value.index, e.value.seed) == (1, 41)


def test_config_file_paths_resolve_relative(tmp_path):
    ldoc, ddoc, sdoc = load_bundled_docs("synthetic10")
    (tmp_path / "in").mkdir()
    for name, doc in (("layout", ldoc), ("demand", ddoc), ("stocks", sdoc)):
        (tmp_path / "in" / f"{name}.json").write_text(json.dumps(doc))
    cfg_doc = {"layout": "in/layout.json", "demand": "in/demand.json", "stocks": "in/stocks.json",
               "scenarios": 2, "seed": 40, "fleet": {"capacity": 10, "shifts": SHIFTS},
               "grid": {"slots": [{"shift": "morning", "counts": [0, 0]}]}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg_doc))
    cfg = load_config(tmp_path / "cfg.json")
    assert cfg.digest() == config(scenarios=2, grid=cfg_doc["grid"]).digest()


def test_emit_batch(tmp_path):
    cfg = config()
    batch = run_batch(cfg, cfg.fleet((1, 0)))
    files = emit_batch(cfg, batch, tmp_path, counts=(1, 0))
    assert files == ["batch.json", "misses.csv", "manifest.json"]
    doc = json.loads((tmp_path / "batch.json").read_text())
    assert doc["scenarios"] == 3 and len(doc["per_scenario"]) == 3
    assert json.loads((tmp_path / "manifest.json").read_text())["counts"] == [1, 0]
