import json
from pathlib import Path

import numpy as np
import pytest

from citrus.cli import main
from citrus.fileio import write_csv_matrix

from conftest import CONFIGS

QUICK_KERNEL = ["--set", "instances=4", "--set", "equivalence_instances=3", "--set", "rk4_instances=1"]


def outputs(directory):
    return {p.name: p.read_bytes() for p in sorted(Path(directory).iterdir()) if not p.name.startswith("timings")}


def test_kernel_check_passes(tmp_path, capsys):
    assert main(["kernel-check", "--out", str(tmp_path), *QUICK_KERNEL]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["passed"] is True
    assert set(report["checks"]) == {"separability", "equivalence", "rk4_accuracy", "rk4_rate", "mass_conservation"}
    assert (tmp_path / "kernel_check.csv").read_text().startswith("suite,instance")
    assert "[PASS] separability" in capsys.readouterr().out


def test_wrong_kronecker_order_fails(tmp_path, capsys):
    code = main(["kernel-check", "--out", str(tmp_path), *QUICK_KERNEL, "--set", "kron_order=ascending"])
    assert code == 1
    assert "[FAIL] separability" in capsys.readouterr().out
    assert json.loads((tmp_path / "report.json").read_text())["passed"] is False


@pytest.mark.parametrize("args", [
    ["kernel-check", "--set", "unknown=1"],
    ["kernel-check", "--set", "instances=many"],
    ["kernel-check", "--config", "/nonexistent/file.cfg"],
    ["truncation", "--set", "k_grid=32, 300"],
    ["oversmoothing", "--set", "layers=20"],
    ["truncation", "--set", "spatial_nodes=10", "--set", "spatial_edge_prob=0", "--set", "k_grid=2"],
    ["teleport"],
])
def test_usage_errors_exit_2(tmp_path, args, capsys):
    assert main([*args, "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_forecast_input_errors_exit_2(tmp_path, capsys):
    write_csv_matrix(tmp_path / "series.csv", np.ones((3, 40)))
    write_csv_matrix(tmp_path / "adj.csv", np.ones((4, 4)) - np.eye(4))
    (tmp_path / "bad.csv").write_text("1,2\n3\n")
    cfg = tmp_path / "f.cfg"
    cfg.write_text("source = csv\nseries = series.csv\nadjacency = adj.csv\n")
    assert main(["forecast", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "3 rows" in capsys.readouterr().err
    cfg.write_text("source = csv\nseries = bad.csv\nadjacency = adj.csv\n")
    assert main(["forecast", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "bad.csv:2" in capsys.readouterr().err
    write_csv_matrix(tmp_path / "asym.csv", np.triu(np.ones((3, 3)), 1))
    cfg.write_text("source = csv\nseries = series.csv\nadjacency = asym.csv\n")
    assert main(["forecast", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_forecast_from_csv_writes_checkpoint(tmp_path):
    code = main(["forecast", "--config", str(CONFIGS / "forecast_csv.cfg"), "--out", str(tmp_path),
                 "--set", "epochs=3"])
    assert code == 0
    assert {"report.json", "metrics.csv", "history.csv", "checkpoint.json"} <= set(outputs(tmp_path))
    metrics = (tmp_path / "metrics.csv").read_text().splitlines()
    assert metrics[0] == "horizon,mae,rmse,mape,mape_excluded,rnmse"
    assert metrics[-1].startswith("all,")


def test_timing_results_kept_out_of_report(tmp_path):
    args = ["truncation", "--out", str(tmp_path), "--set", "seeds=1", "--set", "spatial_nodes=24", "--set", "spatial_edge_prob=0.3",
            "--set", "k_grid=4, 24", "--set", "samples=12", "--set", "epochs=2", "--set", "second_nodes=3"]
    main(args)
    report = json.loads((tmp_path / "report.json").read_text())
    assert "time_increasing" not in report["checks"]
    assert "time_increasing" in json.loads((tmp_path / "timings.json").read_text())
    assert (tmp_path / "truncation_timings.csv").exists()


@pytest.mark.parametrize("args", [
    ["kernel-check", *QUICK_KERNEL],
    ["oversmoothing", "--config", str(CONFIGS / "oversmoothing.cfg")],
    ["stability", "--set", "sizes=6, 7", "--set", "edge_prob=0.5, 0.5", "--set", "snr_grid=inf, 0",
     "--set", "realizations=1", "--set", "student_restarts=1", "--set", "epochs=5",
     "--set", "deviation_realizations=2"],
    ["forecast", "--config", str(CONFIGS / "forecast_planted.cfg"), "--set", "epochs=3",
     "--set", "planted_length=80"],
])
def test_runs_are_byte_identical(tmp_path, args):
    main([*args, "--out", str(tmp_path / "a")])
    main([*args, "--out", str(tmp_path / "b")])
    a = outputs(tmp_path / "a")
    assert a and a == outputs(tmp_path / "b")
