import json
from pathlib import Path

import pytest

from crossprompt.cli import main

TASK = {"n_train": 150, "n_dev": 60, "n_test": 60, "corpus_size": 50, "pseudo_languages": 1}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    manifest = {
        "data_dir": str(root / "data"),
        "backend": str(root / "data" / "backend.pt"),
        "task": TASK,
        "pretrain": {"steps": 10},
        "backend_config": {"hidden_dim": 16},
        "run": {"epochs": 1, "learning_rate": 1e-3},
        "methods": ["up", "ours"],
        "ks": [4],
        "seeds": [0, 1],
        "test_limit": 30,
    }
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest))
    assert main(["gen-data", "--manifest", str(path), "--out-dir", str(root / "data")]) == 0
    assert main(["pretrain", "--manifest", str(path), "--output", manifest["backend"]]) == 0
    return root, path


def test_gen_data_layout(workspace):
    root, _ = workspace
    names = {p.name for p in (root / "data").iterdir()}
    assert {"train.jsonl", "dev.jsonl", "test.EN.jsonl", "test.L1.jsonl", "verbalizers.json", "corpus.jsonl"} <= names


def test_sweep_rows_and_report(workspace, capsys):
    root, manifest = workspace
    assert main(["sweep", "--manifest", str(manifest), "--out-dir", str(root / "out")]) == 0
    run_dir = next((root / "out").iterdir())
    rows = sorted(p.name for p in run_dir.glob("*_k4_seed*.json"))
    assert rows == ["ours_k4_seed0.json", "ours_k4_seed1.json", "up_k4_seed0.json", "up_k4_seed1.json"]
    tsv = (run_dir / "report.tsv").read_text().splitlines()
    assert len(tsv) == 3 and [line.split("\t")[0] for line in tsv[1:]] == ["up", "ours"]
    capsys.readouterr()
    assert main(["report", str(run_dir), "--output", str(root / "r.tsv")]) == 0
    assert capsys.readouterr().out.splitlines()[0].split("\t") == ["method", "K", "EN", "L1", "Avg"]
    assert (root / "r.tsv").read_text().splitlines() == tsv


def test_train_is_deterministic(workspace, monkeypatch):
    root, manifest = workspace
    args = ["train", "--manifest", str(manifest), "--method", "ours", "--k", "4", "--seed", "1"]
    outputs = []
    for name in ("a", "b"):
        monkeypatch.setenv("CROSSPROMPT_OUT_DIR", str(root / name))
        assert main(args) == 0
        outputs.append(next((root / name).rglob("ours_k4_seed1.json")).read_bytes())
    assert outputs[0] == outputs[1]


def test_flags_override_manifest(workspace):
    root, manifest = workspace
    args = ["train", "--manifest", str(manifest), "--method", "up", "--k", "4", "--seed", "0",
            "--alpha", "0.5", "--strategy", "2", "--out-dir", str(root / "flags")]
    assert main(args) == 0
    row = json.loads(next((root / "flags").rglob("up_k4_seed0.json")).read_text())
    assert row["run_config"]["alpha"] == 0.5 and row["strategy"] == 2


def test_eval_and_compare(workspace, capsys):
    root, manifest = workspace
    out = root / "ev"
    assert main(["train", "--manifest", str(manifest), "--method", "ours", "--k", "4", "--seed", "0",
                 "--out-dir", str(out), "--save-checkpoint"]) == 0
    ckpt = next(out.rglob("*.pt"))
    assert main(["eval", "--manifest", str(manifest), "--checkpoint", str(ckpt), "--output", str(root / "ev.json"),
                 "--dump-logits", str(root / "dump.jsonl")]) == 0
    capsys.readouterr()
    assert main(["compare-strategies", "--dump", str(root / "dump.jsonl"),
                 "--verbalizer", str(root / "data" / "verbalizers.json")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 6 and lines[0].startswith("strategy")


def test_exit_codes(workspace, tmp_path):
    root, manifest = workspace
    assert main(["train", "--manifest", str(tmp_path / "missing.json")]) == 2
    assert main(["report", str(tmp_path / "missing.json")]) == 3
    assert main(["compare-strategies", "--dump", str(tmp_path / "none"), "--verbalizer", "x"]) == 3
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"data_dir": str(root / "data"), "backend": str(tmp_path / "no.pt"),
                               "methods": ["up"], "ks": [4], "seeds": [0]}))
    assert main(["train", "--manifest", str(bad)]) == 4
    assert main(["train", "--manifest", str(manifest)]) == 2  # grid, not a single run


def test_pretrain_writes_manifest_backend(workspace, tmp_path):
    root, manifest = workspace
    data = json.loads(manifest.read_text())
    data["backend"] = str(tmp_path / "nested" / "toy.pt")
    path = tmp_path / "m.json"
    path.write_text(json.dumps(data))
    assert main(["pretrain", "--manifest", str(path), "--steps", "2"]) == 0
    assert Path(data["backend"]).is_file()
