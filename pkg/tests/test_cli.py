import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from oradapt import pipeline as P
from oradapt.adapt import AdaptConfig
from oradapt.cli import (ConfigError, RunManifest, main, parse_config, read_metrics,
                         write_config, write_metrics)
from oradapt.evaluation import MetricsReport
from oradapt.nn import load_checkpoint

TINY_INI = """
[data]
num_classes = 4
feature_dim = 4
video_length = 300
n_source_videos = 2
n_target_videos = 4

[model]
clip_length = 4
hidden = 16
latent = 8
gru_hidden = 6

[train]
batch_size = 4
pretrain_epochs = 2
adapt_epochs = 2
steps_per_epoch = 5
temporal_epochs = 2

[eval]
n_eval_per_class = 10
"""


@pytest.fixture
def ini(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_INI)
    return path


def run(*argv):
    return main([str(a) for a in argv])


def chain(ini, out, *extra):
    for cmd in ("gen", "pretrain", "adapt", "eval"):
        assert run(cmd, "--config", ini, "--out-dir", out, *extra) == 0, cmd


# configuration

def test_empty_config_gives_defaults(tmp_path):
    empty = tmp_path / "empty.ini"
    empty.write_text("")
    cfg = parse_config(empty)
    assert (cfg.adapt.tau0, cfg.adapt.lambda_max, cfg.adapt.queue_capacity, cfg.clip_length) == (0.9, 1.0, 1000, 16)
    assert cfg == P.ExperimentConfig()


def test_override_beats_file(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[adapt]\ntau0 = 0.9\n")
    assert parse_config(path, ["tau0=0.5"]).adapt.tau0 == 0.5
    assert parse_config(path, ["adapt.tau0=0.7", "tau0=0.6"]).adapt.tau0 == 0.6


def test_seed_flag_precedence(ini, tmp_path):
    ini.write_text(TINY_INI.replace("[train]", "[train]\nseed = 3"))
    out = tmp_path / "o"
    assert run("gen", "--config", ini, "--out-dir", out, "--seed", 5) == 0
    assert RunManifest.read(out / "manifest_gen.json").config["seed"] == 5
    assert run("gen", "--config", ini, "--out-dir", out, "--seed", 5, "--override", "seed=6") == 0
    assert RunManifest.read(out / "manifest_gen.json").config["seed"] == 6


@pytest.mark.parametrize("text,overrides,match", [
    ("[adapt]\ntau0 = 1.5\n", [], "tau0"),
    ("[adapt]\ntau = 0.5\n", [], "valid keys"),
    ("[nonsense]\nx = 1\n", [], "unknown section"),
    ("[train]\nbatch_size = many\n", [], "expected int"),
    ("", ["no_such_key=1"], "valid keys"),
    ("", ["tau0"], "key=value"),
])
def test_config_errors(tmp_path, text, overrides, match):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError, match=match):
        parse_config(path, overrides)


def test_missing_config_file(tmp_path, capsys):
    assert run("gen", "--config", tmp_path / "nope.ini", "--out-dir", tmp_path) == 2
    assert "nope.ini" in capsys.readouterr().err


def test_config_file_round_trip(tmp_path):
    cfg = P.ExperimentConfig(seed=4, lr_clip=0.01, adapt=AdaptConfig(strategy="adaptive"))
    assert parse_config(write_config(cfg, tmp_path / "c.ini")) == cfg


# commands

def test_adapt_without_pretrain_names_missing_file(ini, tmp_path, capsys):
    out = tmp_path / "run"
    assert run("gen", "--config", ini, "--out-dir", out) == 0
    assert run("adapt", "--config", ini, "--out-dir", out) == 2
    err = capsys.readouterr().err
    assert "clip_pretrained.ckpt" in err and "pretrain" in err


def test_pretrain_without_data(ini, tmp_path, capsys):
    assert run("pretrain", "--config", ini, "--out-dir", tmp_path / "empty") == 2
    assert "gen" in capsys.readouterr().err


def test_chain_is_deterministic(ini, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    chain(ini, a)
    chain(ini, b)
    for name in ("pretrain", "adapt", "eval"):
        assert (a / "metrics" / f"{name}.jsonl").read_bytes() == (b / "metrics" / f"{name}.jsonl").read_bytes()
    assert (a / "checkpoints" / "clip_adapted.ckpt").read_bytes() == (b / "checkpoints" / "clip_adapted.ckpt").read_bytes()


def test_metrics_layout(ini, tmp_path):
    chain(ini, tmp_path)
    records = read_metrics(tmp_path / "metrics" / "adapt.jsonl")
    assert len(records) == 2 + 1
    assert records[-1]["stage"] == "summary"
    for rec in records[:-1]:
        assert {"stage", "epoch", "loss_source", "loss_target", "loss_total", "mask_rate",
                "keep_rate", "lambda"} <= set(rec)
    assert {"balanced_clip_accuracy", "mAP", "per_class_AP", "seed"} <= set(records[-1])
    m = RunManifest.read(tmp_path / "manifest_adapt.json")
    assert m.command == "adapt" and m.seeds == [0] and m.finished >= m.started
    assert set(m.artifacts) >= {"clip", "temporal", "metrics", "out_dir"}


def test_manifest_rerun_is_bit_exact(ini, tmp_path):
    chain(ini, tmp_path / "orig")
    for cmd in ("pretrain", "adapt", "eval"):
        before = (tmp_path / "orig" / "metrics" / f"{cmd}.jsonl").read_bytes()
        assert run("rerun", tmp_path / "orig" / f"manifest_{cmd}.json") == 0
        after = (tmp_path / "orig" / "metrics" / f"{cmd}.jsonl").read_bytes()
        assert before == after


def test_rerun_into_fresh_directory(ini, tmp_path):
    orig, copy = tmp_path / "orig", tmp_path / "copy"
    chain(ini, orig)
    for cmd in ("gen", "pretrain", "adapt"):
        assert run("rerun", orig / f"manifest_{cmd}.json", "--out-dir", copy) == 0
    assert (orig / "metrics" / "adapt.jsonl").read_bytes() == (copy / "metrics" / "adapt.jsonl").read_bytes()


def test_corrupt_checkpoint_fails_cleanly(ini, tmp_path, capsys):
    chain(ini, tmp_path)
    ckpt = tmp_path / "checkpoints" / "clip_adapted.ckpt"
    blob = bytearray(ckpt.read_bytes())
    blob[-5] = ord("1") if blob[-5] != ord("1") else ord("2")
    ckpt.write_bytes(bytes(blob))
    assert run("eval", "--config", ini, "--out-dir", tmp_path) == 2
    assert "checksum" in capsys.readouterr().err


def test_eval_of_lambda_zero_adapt_equals_source_only(ini, tmp_path):
    chain(ini, tmp_path, "--override", "lambda_max=0")
    summary = read_metrics(tmp_path / "metrics" / "eval.jsonl")[-1]
    cfg = parse_config(ini, ["lambda_max=0"])
    ref = P.run_source_only(cfg)
    assert summary["balanced_clip_accuracy"] == ref.balanced_clip_accuracy
    assert summary["mAP"] == ref.mAP


def test_ssda_mode(ini, tmp_path):
    out = tmp_path / "s"
    for cmd in ("gen", "pretrain"):
        assert run(cmd, "--config", ini, "--out-dir", out) == 0
    assert run("adapt", "--config", ini, "--out-dir", out, "--mode", "ssda", "--labeled-fraction", 0.5) == 0
    summary = read_metrics(out / "metrics" / "adapt.jsonl")[-1]
    assert len(summary["diagnostics"]["labeled_videos"]) == 2
    assert any(r["loss_target_labeled"] > 0 for r in read_metrics(out / "metrics" / "adapt.jsonl")[:-1])


def test_eval_pretrained(ini, tmp_path):
    for cmd in ("gen", "pretrain"):
        assert run(cmd, "--config", ini, "--out-dir", tmp_path) == 0
    assert run("eval", "--config", ini, "--out-dir", tmp_path, "--which", "pretrained") == 0
    pre = read_metrics(tmp_path / "metrics" / "pretrain.jsonl")[-1]
    ev = read_metrics(tmp_path / "metrics" / "eval.jsonl")[-1]
    assert pre["balanced_clip_accuracy"] == ev["balanced_clip_accuracy"] and pre["mAP"] == ev["mAP"]


# sweeps and ablations

def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_lambda_sweep_rows(ini, tmp_path):
    assert run("sweep", "--config", ini, "--out-dir", tmp_path, "--param", "lambda",
               "--values", "0,0,1", "--seeds", "0,1") == 0
    rows = _rows(tmp_path / "metrics" / "sweep_lambda.csv")
    assert [r["value"] for r in rows] == ["0.0", "0.0", "1.0"]
    assert rows[0] == rows[1] and all(r["status"] == "ok" and r["n_seeds"] == "2" for r in rows)
    cfg = parse_config(ini)
    ref = np.mean([P.run_source_only(replace(cfg, seed=s)).balanced_clip_accuracy for s in (0, 1)])
    assert float(rows[0]["accuracy"]) == ref


def test_sweep_marks_failed_cells_and_continues(ini, tmp_path):
    assert run("sweep", "--config", ini, "--out-dir", tmp_path, "--param", "beta",
               "--values", "1.5,1", "--seeds", "0") == 0
    rows = _rows(tmp_path / "metrics" / "sweep_beta.csv")
    assert rows[0]["status"].startswith("failed") and rows[1]["status"] == "ok"


def test_fraction_sweep_reports_baseline(ini, tmp_path):
    assert run("sweep", "--config", ini, "--out-dir", tmp_path, "--param", "labeled_fraction",
               "--values", "0.5", "--seeds", "0") == 0
    row = _rows(tmp_path / "metrics" / "sweep_labeled_fraction.csv")[0]
    assert row["st_accuracy"] != "" and row["status"] == "ok"


def test_ablate_has_four_rows_and_full_matches_adapt(ini, tmp_path):
    chain(ini, tmp_path)
    assert run("ablate", "--config", ini, "--out-dir", tmp_path, "--seeds", "0") == 0
    rows = _rows(tmp_path / "metrics" / "ablation.csv")
    assert len(rows) == 4
    assert [(r["distribution_alignment"], r["pseudo_sampling"]) for r in rows] == [
        ("False", "False"), ("True", "False"), ("False", "True"), ("True", "True")]
    summary = read_metrics(tmp_path / "metrics" / "adapt.jsonl")[-1]
    assert float(rows[3]["accuracy"]) == summary["balanced_clip_accuracy"]
    assert float(rows[3]["mAP"]) == summary["mAP"]


def test_write_metrics_line_count(tmp_path):
    report = MetricsReport(epochs=[{"stage": "adapt", "epoch": i} for i in range(3)],
                           balanced_clip_accuracy=0.5, mAP=0.25)
    lines = write_metrics(report, tmp_path / "m.jsonl").read_text().splitlines()
    assert len(lines) == 4
    assert json.loads(lines[-1])["stage"] == "summary"


def test_checkpoints_written_by_pretrain_load(ini, tmp_path):
    for cmd in ("gen", "pretrain"):
        assert run(cmd, "--config", ini, "--out-dir", tmp_path) == 0
    clip = load_checkpoint(tmp_path / "checkpoints" / "clip_pretrained.ckpt")
    gru = load_checkpoint(tmp_path / "checkpoints" / "temporal_source.ckpt")
    assert clip.kind == "mlp" and gru.kind == "gru"
