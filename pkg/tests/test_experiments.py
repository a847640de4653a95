import time

import numpy as np
import pytest

from citrus import experiments
from citrus.config import load_config
from citrus.fileio import write_csv_matrix

from conftest import CONFIGS


def checks_of(outcome):
    return {c.name: c for c in outcome.checks}


def test_three_factor_kernel_check():
    outcome = experiments.run_kernel_check(load_config("kernel-check", CONFIGS / "kernel_check_p3.cfg"))
    assert outcome.passed
    assert {row[2] for row in outcome.tables["kernel_check.csv"][1]} == {3}


def test_oversmoothing_sweep_and_tables():
    outcome = experiments.run_oversmoothing(load_config("oversmoothing", CONFIGS / "oversmoothing.cfg"))
    checks = checks_of(outcome)
    assert outcome.passed and "t_sweep" in checks
    header, rows = outcome.tables["oversmoothing_decay.csv"]
    assert header[:4] == ["layer", "energy", "log_ratio", "bound"] and len(rows) == 11


def test_stability_smoke_config_is_fast():
    start = time.perf_counter()
    outcome = experiments.run_stability(load_config("stability", CONFIGS / "stability_smoke.cfg"))
    assert time.perf_counter() - start < 60
    grid = outcome.tables["stability_grid.csv"][1]
    assert len(grid) == 4
    clean = [row for row in grid if np.isinf(row[0]) and np.isinf(row[1])][0]
    assert clean[4] == clean[5] == clean[6] == 0.0


def test_truncation_small():
    cfg = load_config("truncation", None, ["seeds=2", "spatial_nodes=30", "spatial_edge_prob=0.3",
                                           "second_nodes=3", "k_grid=5, 30", "samples=24", "epochs=5"])
    outcome = experiments.run_truncation(cfg)
    checks = checks_of(outcome)
    assert checks["full_rank_matches"].passed
    rows = outcome.tables["truncation.csv"][1]
    assert len(rows) == 2 * 2 * 2
    ev = outcome.tables["explained_variance.csv"][1]
    assert len(ev) == 30 and ev[-1][2] == pytest.approx(1.0)


def test_forecast_constant_series_is_exact(tmp_path):
    write_csv_matrix(tmp_path / "s.csv", np.full((4, 60), 5.0))
    write_csv_matrix(tmp_path / "a.csv", np.ones((4, 4)) - np.eye(4))
    cfg = load_config("forecast", None, ["series=s.csv", "adjacency=a.csv", "epochs=5"])
    outcome = experiments.run_forecast(cfg, tmp_path)
    assert outcome.report["test_metrics"]["overall"]["mae"] <= 1e-2 * 5.0


def test_forecast_planted_threshold():
    outcome = experiments.run_forecast(load_config("forecast", CONFIGS / "forecast_planted.cfg"))
    assert outcome.passed
    assert outcome.report["epochs_run"] <= 300


def test_forecast_errors_grow_with_horizon():
    maes = {}
    for h in (3, 12):
        cfg = load_config("forecast", CONFIGS / "forecast_planted.cfg", [f"horizon={h}", "epochs=60"])
        maes[h] = experiments.run_forecast(cfg).report["test_metrics"]["overall"]["mae"]
    assert maes[12] >= maes[3]


def test_forecast_series_too_short(tmp_path):
    write_csv_matrix(tmp_path / "s.csv", np.ones((3, 8)))
    write_csv_matrix(tmp_path / "a.csv", np.ones((3, 3)) - np.eye(3))
    cfg = load_config("forecast", None, ["series=s.csv", "adjacency=a.csv"])
    with pytest.raises(experiments.InputError):
        experiments.run_forecast(cfg, tmp_path)


def test_forecast_truncation_bounds():
    cfg = load_config("forecast", CONFIGS / "forecast_planted.cfg", ["k_space=40"])
    with pytest.raises(experiments.InputError):
        experiments.run_forecast(cfg)
