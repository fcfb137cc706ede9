import csv
import json
import subprocess
import sys

import pytest

from sfcad.cli import main


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def small_csv(tmp_path, capsys):
    code, out, _ = _run(capsys, "generate", "--scenario", "lad-like", "--seed", "1", "--T", "300",
                        "--out", str(tmp_path / "data"))
    assert code == 0
    return json.loads(out)["csv"]


def test_generate_train_eval_predict_round_trip(tmp_path, capsys, small_csv):
    mc = tmp_path / "model.json"
    mc.write_text(json.dumps({"d_z": 8, "window_len": 3, "encoder_kind": "transformer", "feedback": True}))
    tc = tmp_path / "train.json"
    tc.write_text(json.dumps({"max_epochs": 2, "batch_size": 32}))
    ckpt = tmp_path / "m.ckpt"
    code, out, _ = _run(capsys, "train", "--model-config", str(mc), "--train-config", str(tc),
                        "--data", small_csv, "--out", str(ckpt))
    assert code == 0
    info = json.loads(out)
    assert info["epochs"] == 2 and ckpt.exists()
    assert len(ckpt.with_suffix(".log.jsonl").read_text().splitlines()) == 2

    code, out, _ = _run(capsys, "eval", "--ckpt", str(ckpt), "--data", small_csv)
    rep = json.loads(out)
    assert code == 0 and rep["feedback_mode"] == "own_prediction"
    assert rep["tp"] + rep["fp"] + rep["tn"] + rep["fn"] == 75

    code, out, _ = _run(capsys, "eval", "--ckpt", str(ckpt), "--data", small_csv, "--hard-feedback",
                        "--split", "val")
    assert json.loads(out)["feedback_mode"] == "own_prediction_hard"

    pred = tmp_path / "pred.csv"
    code, out, _ = _run(capsys, "predict", "--ckpt", str(ckpt), "--data", small_csv, "--out", str(pred))
    assert code == 0
    with open(pred, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["time", "y_hat"] and len(rows) == 1 + 298

    code, out, _ = _run(capsys, "predict", "--ckpt", str(ckpt), "--data", small_csv)
    assert out.splitlines()[0] == "time,y_hat" and len(out.splitlines()) == 299


def test_experiment_command(tmp_path, capsys, small_csv):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"datasets": [{"csv": small_csv}], "model": {"d_z": 8, "window_len": 3},
                                "grid": {"readout_kind": ["max", "mean"]}, "train": {"max_epochs": 1}}))
    code, out, _ = _run(capsys, "experiment", "--spec", str(spec), "--out", str(tmp_path / "exp"))
    assert code == 0
    assert json.loads(out) == {"out": str(tmp_path / "exp"), "reports": 2, "failures": 0}


def test_generate_from_scenario_file(tmp_path, capsys):
    scen = tmp_path / "s.json"
    scen.write_text(json.dumps({"name": "mini", "vnf_chain": ["FW", "LB"], "T": 50,
                                "faults": [{"start": 10, "duration": 20, "kind": "cpu_stress",
                                            "severity": 1.0, "target": 1}]}))
    code, out, _ = _run(capsys, "generate", "--scenario", str(scen), "--seed", "9", "--out", str(tmp_path))
    assert code == 0 and json.loads(out)["seed"] == 9


@pytest.mark.parametrize("argv,error", [
    (["eval", "--ckpt", "missing.ckpt", "--data", "missing.csv"], "FileNotFoundError"),
    (["generate", "--scenario", "BAD", "--out", "x"], "FileNotFoundError"),
])
def test_failures_emit_error_record(tmp_path, capsys, argv, error):
    code, out, err = _run(capsys, *argv)
    assert code != 0 and out == ""
    rec = json.loads(err)
    assert rec["error"] == error and rec["command"] == argv[0] and rec["message"]


def test_config_error_is_reported(tmp_path, capsys, small_csv):
    mc = tmp_path / "model.json"
    mc.write_text(json.dumps({"d_z": 7, "encoder_kind": "bi_rnn"}))
    code, _, err = _run(capsys, "train", "--model-config", str(mc), "--data", small_csv, "--out", str(tmp_path / "m"))
    assert code == 1 and json.loads(err)["error"] == "ConfigError"


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "sfcad", "generate", "--scenario", "wsd-like", "--T", "100",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert json.loads(res.stdout)["T"] == 100
    res = subprocess.run([sys.executable, "-m", "sfcad", "eval", "--ckpt", "nope", "--data", "nope"],
                         capture_output=True, text=True)
    assert res.returncode == 1 and json.loads(res.stderr)["command"] == "eval"
