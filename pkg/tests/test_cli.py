import json
import shutil
import subprocess

import pytest

from expertadapt.cli import main
from expertadapt.data import load_manifest

TINY = {
    "new_experts": [6],
    "annotation_experts": [1, 2, 3],
    "pretrain_experts": 2,
    "ann_counts": [2],
    "expert_counts": [0, 1],
    "finetune_count": 2,
    "n_ways": 2,
    "n_seeds": 2,
    "matrix_experts": [1, 6],
    "train": {"train_steps": 2, "finetune_steps": 2, "batch_size": 2},
    "synth": {"n_cases": 8, "n_test": 2},
}


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "data"
    assert main(["gen-data", "--out", str(out), "--cases", "8", "--size", "64x64", "--seed", "3", "--test-cases", "2"]) == 0
    return out


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


def test_gen_data(dataset):
    ds = load_manifest(dataset)
    assert ds.n_cases == 8 and len(ds.roster) == 7
    assert ds.split("test").n_cases == 2


def test_gen_data_custom_styles(tmp_path):
    styles = tmp_path / "styles.json"
    styles.write_text(json.dumps([{"expert_id": 1}, {"expert_id": 2, "bias_radius": 2}]))
    assert main(["gen-data", "--out", str(tmp_path / "d"), "--cases", "2", "--styles", str(styles), "--test-cases", "0"]) == 0
    assert load_manifest(tmp_path / "d").roster == {1, 2}


def test_train_finetune_eval(tmp_path, dataset, capsys):
    ckpt = tmp_path / "m.pt"
    log = tmp_path / "train.jsonl"
    assert main(["train", "--data", str(dataset), "--experts", "1,2", "--out", str(ckpt), "--steps", "3",
                 "--log", str(log), "--profile", "desk"]) == 0
    lines = [json.loads(x) for x in log.read_text().splitlines()]
    assert [e["step"] for e in lines] == [0, 1, 2]
    assert set(lines[0]) == {"step", "lr", "loss_raw", "loss_norm"}
    tuned = tmp_path / "t.pt"
    assert main(["finetune", "--checkpoint", str(ckpt), "--data", str(dataset), "--expert", "6", "--count", "3",
                 "--out", str(tuned), "--steps", "2", "--scope", "expert_only"]) == 0
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(tuned), "--data", str(dataset), "--branch", "6"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["n_cases"] == 2 and 0 <= doc["metrics"]["dice"] <= 1


def test_experiment_and_report(tmp_path, config, capsys):
    out = tmp_path / "results"
    assert main(["experiment", "expert-count", "--config", str(config), "--out", str(out)]) == 0
    table = capsys.readouterr().out
    assert "| k=0 |" in table and "| k=1 |" in table
    assert main(["experiment", "expert-count", "--config", str(config), "--out", str(out), "--resume"]) == 0
    assert capsys.readouterr().out == table
    assert main(["report", "expert-count", "--out", str(out), "--config", str(config)]) == 0
    assert capsys.readouterr().out == table
    assert main(["report", "expert-count", "--out", str(out), "--format", "json"]) == 0
    json.loads(capsys.readouterr().out)


def test_exit_codes(tmp_path, dataset, config, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"not_a_key": 1}))
    assert main(["experiment", "ann-count", "--config", str(bad), "--out", str(tmp_path / "r")]) == 2
    assert "not_a_key" in capsys.readouterr().err
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.pt"), "--data", str(dataset), "--branch", "1"]) == 3
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["train", "--data", str(empty), "--experts", "1", "--out", str(tmp_path / "m.pt")]) == 3
    assert main(["report", "ann-count", "--out", str(tmp_path / "nothing")]) == 3
    with pytest.raises(SystemExit) as info:
        main(["experiment", "everything", "--out", str(tmp_path)])
    assert info.value.code == 2


def test_numerical_failure_exit_code(tmp_path, dataset, monkeypatch):
    from expertadapt import training

    monkeypatch.setattr(training, "dice_loss_per_sample", lambda logits, target, smooth: logits.flatten(1).sum(1) * float("nan"))
    assert main(["train", "--data", str(dataset), "--experts", "1", "--out", str(tmp_path / "m.pt"), "--steps", "2"]) == 4


@pytest.mark.skipif(shutil.which("expertadapt") is None, reason="console script not installed")
def test_console_script():
    proc = subprocess.run(["expertadapt", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("gen-data", "train", "finetune", "eval", "experiment", "report"):
        assert cmd in proc.stdout
