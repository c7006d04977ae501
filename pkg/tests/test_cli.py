import csv
import json
import subprocess
import sys

import pytest

from dreamnet.checkpoint import load_checkpoint
from dreamnet.cli import main

TINY_FLAGS = ["--backbone-dims", "8,6,4", "--num-rae", "2", "--rae-hidden-dim", "4", "--batch-size", "6"]


@pytest.fixture
def tiny_data(tmp_path):
    out = tmp_path / "data"
    assert main(["synth", "--out", str(out), "--dim", "8", "--sets-per-class", "6", "--frames", "20", "--seed", "1"]) == 0
    return out / "manifest.txt"


def train(tmp_path, data, *extra, out="run"):
    return main(["train", "--data", str(data), "--out", str(tmp_path / out), "--quiet", *TINY_FLAGS, *extra])


def records(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


# ---------------------------------------------------------------- synth


def test_synth_defaults(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "d")]) == 0
    assert "N=300 dim=20 classes=3" in capsys.readouterr().out
    lines = (tmp_path / "d" / "manifest.txt").read_text().splitlines()
    assert len([l for l in lines if l.startswith("samples/")]) == 300


def test_synth_byte_identical(tmp_path):
    for name in ("a", "b"):
        main(["synth", "--out", str(tmp_path / name), "--seed", "1", "--sets-per-class", "3", "--dim", "4"])
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_synth_null_separation(tmp_path):
    main(["synth", "--out", str(tmp_path / "d"), "--separation", "0", "--sets-per-class", "2", "--dim", "3"])
    assert "provenance: null-separation" in (tmp_path / "d" / "manifest.txt").read_text()


# ---------------------------------------------------------------- train


def test_train_one_epoch(tmp_path, tiny_data):
    assert train(tmp_path, tiny_data, "--epochs", "1") == 0
    recs = records(tmp_path / "run" / "metrics.jsonl")
    assert len(recs) == 1
    rec = recs[0]
    assert rec["epoch"] == 1 and rec["lr"] == 0.01
    assert {"train_loss", "loss", "rt", "head_acc", "vote_acc", "test_vote_acc"} <= set(rec)
    assert len(rec["head_acc"]) == 2
    timing = records(tmp_path / "run" / "timings.jsonl")
    assert timing[0]["epoch"] == 1 and timing[0]["epoch_seconds"] > 0
    assert (tmp_path / "run" / "best.ckpt").exists() and (tmp_path / "run" / "final.ckpt").exists()


def test_train_deterministic(tmp_path, tiny_data):
    train(tmp_path, tiny_data, "--epochs", "3", out="a")
    train(tmp_path, tiny_data, "--epochs", "3", out="b")
    for name in ("metrics.jsonl", "final.ckpt", "best.ckpt", "config.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_resume_continues(tmp_path, tiny_data):
    train(tmp_path, tiny_data, "--epochs", "3", out="full")
    train(tmp_path, tiny_data, "--epochs", "2", out="part")
    part = tmp_path / "part"
    assert main(["train", "--data", str(tiny_data), "--out", str(part), "--quiet", "--epochs", "1", "--resume", str(part / "final.ckpt")]) == 0
    assert [r["epoch"] for r in records(part / "metrics.jsonl")] == [1, 2, 3]
    assert (part / "metrics.jsonl").read_bytes() == (tmp_path / "full" / "metrics.jsonl").read_bytes()


def test_config_precedence(tmp_path, tiny_data):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# tiny\nepochs = 2\nlr = 0.5\nlambda_rt: 0.001\nshortcuts = false\n")
    assert train(tmp_path, tiny_data, "--config", str(cfg), "--lr", "0.02") == 0
    recs = records(tmp_path / "run" / "metrics.jsonl")
    assert len(recs) == 2 and recs[0]["lr"] == 0.02
    model, meta = load_checkpoint(tmp_path / "run" / "final.ckpt")
    assert model.config.lambda_rt == 0.001 and model.config.shortcuts is False
    assert meta["run"]["lr"] == 0.02
    echo = (tmp_path / "run" / "config.txt").read_text()
    assert "lr = 0.02" in echo and "shortcuts = False" in echo


def test_config_errors_before_training(tmp_path, tiny_data):
    bad = tmp_path / "bad.cfg"
    bad.write_text("depth = 3\n")
    assert train(tmp_path, tiny_data, "--config", str(bad)) == 1
    assert train(tmp_path, tiny_data, "--rae-hidden-dim", "9", out="r2") == 1
    assert not (tmp_path / "r2" / "metrics.jsonl").exists()
    assert main(["train", "--data", str(tiny_data), "--out", str(tmp_path / "r3"), "--backbone-dims", "20,16,12"]) == 1
    assert main(["train", "--data", str(tmp_path / "missing.txt"), "--out", str(tmp_path / "r4")]) == 1


def test_non_finite_aborts_with_epoch(tmp_path, tiny_data, capsys):
    assert train(tmp_path, tiny_data, "--epochs", "3", "--lr", "1e300") == 2
    assert "epoch 1" in capsys.readouterr().err


def test_usage_error():
    assert main(["frobnicate"]) == 1
    assert main([]) == 1


# ---------------------------------------------------------------- eval


def test_eval_matches_last_record(tmp_path, tiny_data, capsys):
    train(tmp_path, tiny_data, "--epochs", "2", "--train-fraction", "1")
    last = records(tmp_path / "run" / "metrics.jsonl")[-1]
    out = tmp_path / "ev.json"
    assert main(["eval", "--checkpoint", str(tmp_path / "run" / "final.ckpt"), "--data", str(tiny_data), "--out", str(out)]) == 0
    ev = json.loads(out.read_text())
    assert ev["vote_acc"] == pytest.approx(last["vote_acc"], abs=1e-12)
    assert ev["head_acc"] == pytest.approx(last["head_acc"], abs=1e-12)
    assert ev["config"]["num_rae"] == 2
    assert sum(map(sum, ev["confusion"])) == 18
    text = capsys.readouterr().out
    assert "head 1:" in text and "vote:" in text and "confusion" in text


def test_eval_final_only_heads(tmp_path, tiny_data):
    train(tmp_path, tiny_data, "--epochs", "1", "--heads", "final")
    out = tmp_path / "ev.json"
    main(["eval", "--checkpoint", str(tmp_path / "run" / "final.ckpt"), "--data", str(tiny_data), "--out", str(out)])
    ev = json.loads(out.read_text())
    assert ev["head_acc"] == [ev["vote_acc"]]


def test_eval_empty_and_mismatch(tmp_path, tiny_data):
    train(tmp_path, tiny_data, "--epochs", "1")
    ckpt = str(tmp_path / "run" / "final.ckpt")
    empty = tmp_path / "empty.txt"
    empty.write_text("mode: matrix\ndim: 8\nclasses: 3\n")
    assert main(["eval", "--checkpoint", ckpt, "--data", str(empty)]) == 1
    main(["synth", "--out", str(tmp_path / "d5"), "--dim", "5", "--sets-per-class", "2"])
    assert main(["eval", "--checkpoint", ckpt, "--data", str(tmp_path / "d5" / "manifest.txt")]) == 1


# ---------------------------------------------------------------- gradcheck


def test_gradcheck_default_passes(capsys):
    assert main(["gradcheck"]) == 0
    text = capsys.readouterr().out
    for name in ("bimap", "reeig", "logeig", "shortcut", "head", "model"):
        assert name in text


def test_gradcheck_unreachable_tol(capsys):
    assert main(["gradcheck", "--layer", "bimap", "--tol", "1e-20"]) == 3
    assert "FAIL" in capsys.readouterr().out


def test_gradcheck_single_layer(capsys):
    assert main(["gradcheck", "--layer", "reeig"]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if "tol=" in l]
    assert lines and all(l.startswith("reeig") for l in lines)


# ---------------------------------------------------------------- inspect


def test_inspect_csv(tmp_path, tiny_data):
    train(tmp_path, tiny_data, "--epochs", "1")
    two = tmp_path / "two"
    main(["synth", "--out", str(two), "--dim", "8", "--classes", "2", "--sets-per-class", "1"])
    args = ["inspect", "--checkpoint", str(tmp_path / "run" / "final.ckpt"), "--data", str(two / "manifest.txt")]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
    rows = list(csv.reader((tmp_path / "a.csv").open()))
    assert rows[0] == ["sample_id", "layer", "nuclear_norm"]
    data_rows = [r for r in rows[1:] if r[0] != "mean"]
    summary = [r for r in rows[1:] if r[0] == "mean"]
    assert len(data_rows) == 2 * (2 + 2) and len(summary) == 4
    assert [r[1] for r in summary] == ["z", "h_tilde_1", "h_tilde_2", "h_hat_2"]
    main(args + ["--out", str(tmp_path / "b.csv")])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "dreamnet", "gradcheck", "--layer", "shortcut"], capture_output=True, text=True)
    assert res.returncode == 0 and "ALL PASS" in res.stdout
