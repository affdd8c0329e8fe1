import json
import os
import subprocess
import sys

import numpy as np
import pytest

from stgdat.cli import main


def run(argv, capsys):
    rc = main([str(a) for a in argv])
    out = capsys.readouterr()
    return rc, out.out, out.err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, run_dir = root / "data", root / "run"
    assert main(["gen-synthetic", "--n-scenes", "10", "--T-h", "3", "--T-f", "4", "--out", str(data)]) == 0
    assert main(["train", "--data", str(data), "--epochs", "1", "--out", str(run_dir)]) == 0
    return root, data, run_dir / "checkpoint.json"


def test_train_outputs(workspace):
    root, data, ck = workspace
    doc = json.loads(ck.read_text())
    assert doc["config"]["model"]["ablation"] == "T+C+K"
    assert (ck.parent / "metrics.jsonl").exists()
    assert (ck.parent / "manifest.json").exists()


def test_predict_rerun_byte_identical(workspace, capsys):
    root, data, ck = workspace
    outs = []
    out = root / "pred.json"
    for _ in range(2):
        rc, _, err = run(["predict", "--checkpoint", ck, "--data", data, "--k", 20, "--seed", 7, "--out", out], capsys)
        assert rc == 0, err
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    doc = json.loads(outs[0])
    ag = doc["predictions"][0]["agents"][0]
    assert np.asarray(ag["samples"]).shape == (20, 4, 2)


def test_eval_against_itself_is_zero(workspace, capsys, tmp_path):
    root, data, ck = workspace
    pred = tmp_path / "p.json"
    assert run(["predict", "--checkpoint", ck, "--data", data, "--out", pred], capsys)[0] == 0
    doc = json.loads(pred.read_text())
    meta = json.loads((data / "dataset.json").read_text())
    files = {r["recording_id"]: r["file"] for r in meta["recordings"]}
    scene = doc["predictions"][0]
    rows = ["frame_id,agent_id,agent_type,x,y,v,psi"]
    for ag in scene["agents"]:
        for t, (x, y) in zip(ag["t"], ag["samples"][0]):
            rows.append(f"{round(t / 0.5)},{ag['agent_id']},{ag['agent_type']},{x!r},{y!r},1.0,0.0")
    truth = tmp_path / "truth.csv"
    truth.write_text("\n".join(rows) + "\n")
    doc["predictions"] = [scene]
    pred.write_text(json.dumps(doc))
    rc, out, err = run(["eval", "--pred", pred, "--truth", truth], capsys)
    assert rc == 0, err
    assert out.startswith("ade=0 fde=0")
    assert scene["recording_id"] in files


def test_eval_against_dataset_directory(workspace, capsys, tmp_path):
    root, data, ck = workspace
    pred = tmp_path / "p.json"
    assert run(["predict", "--checkpoint", ck, "--data", data, "--k", 3, "--out", pred], capsys)[0] == 0
    rc, out, err = run(["eval", "--pred", pred, "--truth", data, "--out", tmp_path / "r.json"], capsys)
    assert rc == 0, err
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["n_samples"] == 3 and rep["min_ade"] <= rep["ade"] + 1e-12


def test_constraint_violating_config_rejected(workspace, capsys, tmp_path):
    root, data, _ = workspace
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"model": {"loss": {"alpha": 0.3, "beta_w": 0.5}}}))
    rc, _, err = run(["train", "--data", data, "--config", cfg, "--out", tmp_path / "r"], capsys)
    assert rc == 1
    assert "0 < 1 - alpha < beta_w" in err


def test_unknown_config_key_rejected(workspace, capsys, tmp_path):
    root, data, _ = workspace
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"train": {"epochz": 3}}))
    rc, _, err = run(["train", "--data", data, "--config", cfg, "--out", tmp_path / "r"], capsys)
    assert rc == 1 and "train" in err


@pytest.mark.parametrize("argv", [[], ["predict"], ["train", "--data", "x"], ["nonsense"],
                                  ["gen-synthetic", "--out", "x", "--threads", "0"]])
def test_usage_errors_exit_one(argv, capsys):
    assert run(argv, capsys)[0] == 1


def test_missing_files_exit_one(capsys, tmp_path):
    rc, _, err = run(["predict", "--checkpoint", tmp_path / "nope.json", "--data", tmp_path, "--out",
                      tmp_path / "o.json"], capsys)
    assert rc == 1 and err


def test_track_cvm_and_model(workspace, capsys, tmp_path):
    root, data, ck = workspace
    for proc in ("cvm", "cam", "model"):
        out = tmp_path / f"{proc}.json"
        rc, text, err = run(["track", "--process", proc, "--checkpoint", ck, "--n-scenes", 2, "--steps", 8,
                             "--occlusion", "1:2", "--out", out], capsys)
        assert rc == 0, err
        assert text.startswith(proc)
        doc = json.loads(out.read_text())
        assert np.isfinite(doc["modes"][proc]["position_rmse"])
    rc, _, err = run(["track", "--process", "model", "--out", tmp_path / "x.json"], capsys)
    assert rc == 1 and "checkpoint" in err


def test_grad_check_command(capsys, tmp_path):
    rc, out, err = run(["grad-check", "--ablation", "T", "--entries", 1, "--out", tmp_path / "g.json"], capsys)
    assert rc == 0, err
    assert json.loads((tmp_path / "g.json").read_text())["max_relative_error"] < 1e-4


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "stgdat", "--help"], capture_output=True, text=True,
                          env={**os.environ, "PYTHONHASHSEED": "0"})
    assert proc.returncode == 0 and "gen-synthetic" in proc.stdout
