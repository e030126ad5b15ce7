import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from prunelab.cli import build_parser, main
from prunelab.nn import load_checkpoint

DATA = ["--n-samples", "128", "--test-samples", "64", "--original-epochs", "2", "--batch-size", "32"]


def test_subcommands_exist():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    assert set(sub.choices) == {"train", "prune", "retrain", "pipeline", "schedule", "report", "plot"}


def test_global_flags_before_or_after_subcommand(capsys):
    assert main(["--seed", "3", "--threads", "1", "report", "--arch", "resnet56"]) == 0
    a = json.loads(capsys.readouterr().out)
    assert main(["report", "--arch", "resnet56", "--seed", "3"]) == 0
    assert json.loads(capsys.readouterr().out) == a
    assert a["params"] == 853_018 and a["flops"] == 2 * a["macs"] and a["convention"] == "flops=2*macs"
    assert isinstance(a["per_layer"], list)


def test_schedule_csv(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert main(["schedule", "--kind", "lrw", "--epochs", "72", "--steps-per-epoch", "2", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 144 and float(rows[0]["lr"]) == 0.01 and float(rows[-1]["lr"]) == 0.001
    main(["schedule", "--kind", "clr", "--epochs", "10", "--lr-min", "1e-4"])
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert float(rows[1]["lr"]) == 0.1 and float(rows[-1]["lr"]) == 1e-4


def test_schedule_bad_flag_value(capsys):
    assert main(["schedule", "--kind", "clr", "--epochs", "10", "--warmup-frac", "0.7"]) == 2
    assert "warmup_frac" in capsys.readouterr().err


def test_train_prune_retrain_report(tmp_path, capsys):
    ckpt = tmp_path / "m.ckpt"
    assert main(["--out-dir", str(tmp_path), "train", *DATA, "--out", str(ckpt)]) == 0
    assert json.loads(capsys.readouterr().out)["checkpoint"] == str(ckpt)
    pruned = tmp_path / "p.ckpt"
    report = tmp_path / "r.json"
    assert main(["prune", "--in", str(ckpt), "--out", str(pruned), "--method", "l1_filter", "--ratio", "0.5",
                 "--report", str(report), *DATA]) == 0
    r = json.loads(report.read_text())
    assert r["keep_counts"] == {"conv1": 8, "conv2": 16, "conv3": 32}
    assert r["after"]["params"] < r["before"]["params"] and r["params_down_pct"] > 0
    assert r["convention"] == "flops=2*macs"
    store, arch = load_checkpoint(pruned)
    assert arch.find("conv1").out_channels == 8
    retrained = tmp_path / "rt.ckpt"
    assert main(["retrain", "--in", str(pruned), "--out", str(retrained), "--kind", "clr", "--epochs", "1", *DATA]) == 0
    out = json.loads(capsys.readouterr().out)
    assert 0 <= out["test_acc"] <= 1 and out["epochs"] == 1
    assert main(["report", "--in", str(retrained)]) == 0
    assert json.loads(capsys.readouterr().out)["params"] == r["after"]["params"]


def test_pipeline_and_plot(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"name": "cli", "repeats": 1, "n_samples": 128, "test_samples": 64, "original_epochs": 2,
                               "retrain_epochs": [1, 2], "retrain_schedule": "ft", "batch_size": 32}))
    assert main(["pipeline", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "cli" / "aggregate.csv").exists()
    svg = tmp_path / "b.svg"
    assert main(["plot", "--kind", "acc_vs_budget", "--records", str(tmp_path / "cli"), "--out", str(svg)]) == 0
    assert svg.read_text().lstrip().startswith("<?xml")
    assert main(["plot", "--kind", "schedule", "--out", str(tmp_path / "s.svg")]) == 0


def test_pipeline_failure_exit_code(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"name": "f", "repeats": 1, "n_samples": 64, "test_samples": 32, "original_epochs": 1,
                               "retrain_epochs": 1, "retrain_schedule": "slr"}))
    assert main(["pipeline", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 1


def test_pipeline_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"lr": 0.1}))
    assert main(["pipeline", "--config", str(cfg)]) == 2
    assert "'lr'" in capsys.readouterr().err


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "prunelab", "--help"], capture_output=True, text=True, check=True)
    assert "pipeline" in out.stdout
