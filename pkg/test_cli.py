import csv
import json
from pathlib import Path

import pytest

import cli
from core.errors import TrainingHalted
from core.models import CSV_COLUMNS, TrainLog


def _config(tmp_path: Path, **sections) -> str:
    payload = {
        "seed": 0,
        "dataset": {"kind": "synthetic", "N": 5, "d": 10},
        "init": {"kind": "deterministic", "width": 20},
        "train": {"eta": "certified", "epochs": 5},
    }
    payload.update(sections)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def _read_csv(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_check_init_fails_without_scaling(tmp_path, capsys):
    assert cli.main(["check-init", "--config", _config(tmp_path)]) == 1
    report = json.loads(capsys.readouterr().out)
    assert report["gd_conditions"] != [True, True, True]


def test_check_init_passes_with_scaling(tmp_path, capsys):
    config = _config(tmp_path, init={"kind": "deterministic", "width": 20, "scale_to_satisfy": True})
    assert cli.main(["check-init", "--config", config]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["gd_conditions"] == [True, True, True]
    assert report["gamma0"] == pytest.approx(0.5)


def test_gamma0_of_one_is_a_well_posedness_error(tmp_path):
    config = _config(tmp_path, init={"kind": "deterministic", "width": 20, "gamma0": 1.0})
    assert cli.main(["check-init", "--config", config]) == 3


def test_certified_training_writes_artifacts(tmp_path, capsys):
    config = _config(tmp_path, init={"kind": "deterministic", "width": 20, "scale_to_satisfy": True})
    out = tmp_path / "run"
    assert cli.main(["train", "--config", config, "--out", str(out)]) == 0

    rows = _read_csv(out / "train_log.csv")
    assert rows[0] == list(CSV_COLUMNS)
    assert [row[0] for row in rows[1:]] == [str(epoch) for epoch in range(6)]
    sidecar = json.loads((out / "train_log.json").read_text(encoding="utf-8"))
    assert sidecar["init_report"]["gd_conditions"] == [True, True, True]
    assert (out / "final_params.npz").exists()
    assert capsys.readouterr().out.startswith("final train_loss=")


def test_held_out_loss_column_is_filled(tmp_path):
    config = _config(
        tmp_path,
        dataset={"kind": "synthetic", "N": 5, "d": 10, "test_N": 7},
        init={"kind": "identity", "width": 20, "gamma": 0.1},
        train={"eta": 0.01, "epochs": 2},
        mode="experiment",
    )
    out = tmp_path / "run"
    assert cli.main(["train", "--config", config, "--out", str(out)]) == 0
    rows = _read_csv(out / "train_log.csv")
    test_column = rows[0].index("test_loss")
    assert all(row[test_column] for row in rows[1:])


def test_missing_idx_files_fall_back_to_synthetic(tmp_path):
    config = _config(
        tmp_path,
        dataset={
            "kind": "idx",
            "train_images": "absent-images.idx",
            "train_labels": "absent-labels.idx",
            "fallback": {"kind": "synthetic", "N": 5, "d": 10},
        },
        init={"kind": "identity", "width": 20, "gamma": 0.1},
        train={"eta": 0.01, "epochs": 1},
        mode="experiment",
    )
    assert cli.main(["train", "--config", config, "--out", str(tmp_path / "run")]) == 0


def test_configuration_errors_exit_with_two(tmp_path):
    assert cli.main(["train", "--config", _config(tmp_path, train={"epochs": 0})]) == 2
    assert cli.main(["train", "--config", _config(tmp_path, colour="blue")]) == 2
    assert cli.main(["train", "--config", str(tmp_path / "absent.json")]) == 2


def test_strict_mode_rejects_large_step(tmp_path):
    config = _config(
        tmp_path,
        init={"kind": "deterministic", "width": 20, "scale_to_satisfy": True},
        train={"eta": 1000.0, "epochs": 2},
    )
    assert cli.main(["train", "--config", config, "--out", str(tmp_path / "run")]) == 2


def test_halted_training_keeps_the_partial_log(tmp_path, monkeypatch):
    def halting_train(*args, **kwargs):
        raise TrainingHalted("gamma*||A(3)|| = 1.01 >= 1", epoch=3, gamma_norm=1.01, log=TrainLog(config={}))

    monkeypatch.setattr(cli, "train", halting_train)
    config = _config(tmp_path, init={"kind": "identity", "width": 20, "gamma": 0.1}, train={"eta": 0.01, "epochs": 5})
    out = tmp_path / "run"
    assert cli.main(["train", "--config", config, "--out", str(out)]) == 4
    assert _read_csv(out / "train_log.csv") == [list(CSV_COLUMNS)]


def test_eta_sweep_writes_cells_and_summary(tmp_path):
    config = _config(
        tmp_path,
        init={"kind": "identity", "width": 20, "gamma": 0.1},
        train={"eta": "inverse_n", "epochs": 2},
        sweep={"eta": [0.001, 0.01]},
        mode="experiment",
    )
    out = tmp_path / "sweep"
    assert cli.main(["sweep", "--config", config, "--out", str(out)]) == 0
    summary = _read_csv(out / "sweep_summary.csv")
    assert [row[1] for row in summary[1:]] == ["0.001", "0.01"]
    assert all(row[2] == "ok" for row in summary[1:])
    assert (out / "cell_eta_0.001.csv").exists()
    assert (out / "cell_eta_0.01.json").exists()


def test_sweep_without_an_axis_is_a_configuration_error(tmp_path):
    config = _config(tmp_path, train={"eta": 0.01, "epochs": 2})
    assert cli.main(["sweep", "--config", config, "--out", str(tmp_path / "sweep")]) == 2


def test_grad_check_prints_errors(tmp_path, capsys):
    assert cli.main(["grad-check", "--config", _config(tmp_path)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["passed"] is True
    assert "implicit_vs_dense" in payload["errors"]


def test_mode_flag_overrides_the_config(tmp_path, monkeypatch):
    seen = {}

    def capture(config, out_dir):
        seen["mode"] = config.mode
        return 0

    monkeypatch.setattr(cli, "cmd_train", capture)
    assert cli.main(["train", "--config", _config(tmp_path), "--mode", "experiment"]) == 0
    assert seen["mode"] == "experiment"


def test_derived_seeds_are_distinct_and_stable():
    first = cli.derived_seeds(0)
    assert first == cli.derived_seeds(0)
    assert len(set(first.values())) == 3


def test_parallel_width_sweep_keeps_cell_order(tmp_path):
    config = _config(
        tmp_path,
        init={"kind": "deterministic", "width": 20},
        train={"eta": 0.01, "epochs": 2},
        sweep={"width": [20, 40]},
        mode="experiment",
    )
    out = tmp_path / "sweep"
    assert cli.main(["sweep", "--config", config, "--out", str(out), "--parallel", "2"]) == 0
    header, *cells = _read_csv(out / "sweep_summary.csv")
    assert [float(row[header.index("value")]) for row in cells] == [20.0, 40.0]
    assert all(row[header.index("status")] == "ok" for row in cells)
    assert (out / "cell_width_20.csv").exists()
    assert (out / "cell_width_40.csv").exists()


def test_grad_check_fails_with_a_coarse_adjoint_tolerance(tmp_path, capsys):
    config = _config(tmp_path, grad_check={"adjoint_tol": 1e-1})
    assert cli.main(["grad-check", "--config", config]) == 1
    payload = json.loads(capsys.readouterr().out)
    assert payload["passed"] is False
    worst = max(error for pair in payload["errors"].values() for error in pair.values())
    assert worst > payload["tolerance"]


def test_noncontractive_start_is_a_training_halt(tmp_path):
    config = _config(
        tmp_path,
        init={"kind": "identity", "width": 20, "gamma": 0.5, "beta": 3.0},
        train={"eta": 0.01, "epochs": 2},
    )
    assert cli.main(["train", "--config", config, "--out", str(tmp_path / "run")]) == 4
