import json
import subprocess
import sys

import numpy as np
import pytest

from structalign.cli import main
from structalign.report import read_report

TINY = {
    "seed": 3,
    "alignment": {
        "latent_dim": 8,
        "encoder_hidden": [16],
        "refiner_layers": 1,
        "refiner_heads": 2,
        "batch_size": 16,
        "k1": 4,
        "k2": 4,
        "structures_per_batch": 2,
        "epochs": 2,
        "lr": 1e-3,
    },
    "synth": {
        "n_categories": 6,
        "per_category": 8,
        "dim_x": 10,
        "dim_y": 9,
        "noise": 0.05,
        "latent_dim": 4,
    },
}


def write_config(tmp_path, **overrides):
    raw = json.loads(json.dumps(TINY))
    raw.update(overrides)
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(raw))
    return path


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_synth_writes_four_files(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code, out, err = run_cli(capsys, "synth", "--config", str(cfg), "--out", str(tmp_path / "data"))
    assert code == 0 and err == ""
    payload = json.loads(out)
    assert len(payload["written"]) == 4
    for p in payload["written"]:
        assert p.endswith(".embd")
        assert (tmp_path / "data" / p.split("/")[-1]).exists()


def test_synth_without_config_uses_defaults(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "synth", "--out", str(tmp_path / "d"), "--seed", "5")
    assert code == 0
    assert len(json.loads(out)["written"]) == 4


def test_align_end_to_end(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out_dir = tmp_path / "run"
    code, out, err = run_cli(capsys, "align", "--config", str(cfg), "--out", str(out_dir))
    assert code == 0 and err == ""
    payload = json.loads(out)
    assert payload["epochs"] == 2
    assert np.isfinite(payload["gw_train"]) and np.isfinite(payload["gw_heldout"])
    report = read_report(out_dir / "report.jsonl")
    assert payload["run_id"] == report.run_id
    assert (out_dir / "model.npz").exists()
    assert (out_dir / "model_init.npz").exists()


def test_align_requires_out(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code, out, err = run_cli(capsys, "align", "--config", str(cfg))
    assert code == 1 and out == ""
    payload = json.loads(err)
    assert payload["error"] == "ConfigError"
    assert "output directory" in payload["message"]


def test_align_rerun_is_byte_identical(tmp_path, capsys):
    cfg = write_config(tmp_path)
    for name in ("a", "b"):
        code, _, _ = run_cli(capsys, "align", "--config", str(cfg), "--out", str(tmp_path / name))
        assert code == 0
    assert (tmp_path / "a" / "report.jsonl").read_bytes() == (
        tmp_path / "b" / "report.jsonl"
    ).read_bytes()


def test_seed_flag_changes_run_id(tmp_path, capsys):
    cfg = write_config(tmp_path)
    _, out1, _ = run_cli(capsys, "align", "--config", str(cfg), "--out", str(tmp_path / "s3"))
    _, out2, _ = run_cli(
        capsys, "align", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path / "s4")
    )
    assert json.loads(out1)["run_id"] != json.loads(out2)["run_id"]


def test_eval_against_checkpoint(tmp_path, capsys):
    tasks = [
        {"task": "silhouette", "set": "x_heldout"},
        {"task": "one_shot", "set": "x_heldout", "trials": 5},
    ]
    cfg = write_config(tmp_path, eval_tasks=tasks)
    run_dir = tmp_path / "run"
    assert run_cli(capsys, "align", "--config", str(cfg), "--out", str(run_dir))[0] == 0
    code, out, err = run_cli(
        capsys,
        "eval",
        "--config",
        str(cfg),
        "--checkpoint",
        str(run_dir / "model.npz"),
        "--out",
        str(tmp_path / "ev"),
    )
    assert code == 0 and err == ""
    payload = json.loads(out)
    assert payload["records"] == 2
    report = read_report(tmp_path / "ev" / "eval_report.jsonl")
    assert [r["task"] for r in report.records] == ["silhouette", "one_shot"]


def test_eval_zero_tasks_writes_valid_report(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code, out, _ = run_cli(capsys, "eval", "--config", str(cfg), "--out", str(tmp_path / "ev"))
    assert code == 0
    assert json.loads(out)["records"] == 0
    report = read_report(tmp_path / "ev" / "eval_report.jsonl")
    assert report.records == []


def test_config_errors_are_machine_readable(tmp_path, capsys):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"alignment": {"learning_rate": 0.1}}))
    code, out, err = run_cli(capsys, "align", "--config", str(path), "--out", str(tmp_path / "o"))
    assert code == 1 and out == ""
    lines = err.strip().splitlines()
    assert len(lines) == 1
    payload = json.loads(lines[0])
    assert payload["error"] == "ConfigError"
    assert "alignment.learning_rate" in payload["message"]


def test_missing_config_file_fails_cleanly(tmp_path, capsys):
    code, _, err = run_cli(
        capsys, "align", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")
    )
    assert code == 1
    assert json.loads(err)["error"] == "ConfigError"


def make_embd_files(tmp_path, capsys):
    cfg = write_config(tmp_path, synth=dict(TINY["synth"], dim_y=10))
    data = tmp_path / "data"
    assert run_cli(capsys, "synth", "--config", str(cfg), "--out", str(data))[0] == 0
    return data


def test_ot_sinkhorn_command(tmp_path, capsys):
    data = make_embd_files(tmp_path, capsys)
    code, out, err = run_cli(
        capsys,
        "ot",
        "sinkhorn",
        "--x",
        str(data / "x_train.embd"),
        "--y",
        str(data / "y_train.embd"),
        "--out",
        str(tmp_path / "plan"),
    )
    assert code == 0 and err == ""
    payload = json.loads(out)
    assert payload["iterations"] == 100
    assert payload["residual"] < 1e-6
    plan = np.load(tmp_path / "plan" / "plan.npy")
    assert plan.shape == (32, 32)
    assert np.allclose(plan.sum(axis=1), 1.0 / 32, atol=1e-9)


def test_ot_gw_self_comparison_is_near_zero(tmp_path, capsys):
    # noiseless clusters: within-category distances are exactly zero, so
    # the entropic blur is free and self-comparison lands at ~0
    cfg = write_config(tmp_path, synth=dict(TINY["synth"], noise=0.0))
    data = tmp_path / "data"
    assert run_cli(capsys, "synth", "--config", str(cfg), "--out", str(data))[0] == 0
    code, out, _ = run_cli(
        capsys,
        "ot",
        "gw",
        "--x",
        str(data / "x_train.embd"),
        "--y",
        str(data / "x_train.embd"),
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["value"] < 1e-3
    assert payload["converged"] is True


def test_ot_underflow_reports_error(tmp_path, capsys):
    data = make_embd_files(tmp_path, capsys)
    code, _, err = run_cli(
        capsys,
        "ot",
        "sinkhorn",
        "--x",
        str(data / "x_train.embd"),
        "--y",
        str(data / "y_train.embd"),
        "--epsilon",
        "1e-9",
    )
    assert code == 1
    assert json.loads(err)["error"] == "UnderflowError"


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "structalign.cli", "--help"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "synth" in proc.stdout and "align" in proc.stdout


def test_unknown_subcommand_exits_nonzero():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code != 0
