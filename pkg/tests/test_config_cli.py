import csv
import json

import numpy as np
import pytest

from sproutlab.cli import ABLATION_ROWS, main, run
from sproutlab.config import OUTPUT_ROOT_ENV, parse_config
from sproutlab.data import synth_digits, write_idx
from sproutlab.errors import ConfigError


@pytest.fixture
def idx_config(tmp_path):
    tr, te = synth_digits(64, 0), synth_digits(32, 1)
    write_idx(tmp_path / "tr-img", tmp_path / "tr-lab", tr.images, tr.labels)
    write_idx(tmp_path / "te-img", tmp_path / "te-lab", te.images, te.labels)
    cfg = tmp_path / "exp.ini"
    cfg.write_text(f"""
[dataset]
kind = idx
train_images = {tmp_path / 'tr-img'}
train_labels = {tmp_path / 'tr-lab'}
test_images = {tmp_path / 'te-img'}
test_labels = {tmp_path / 'te-lab'}

[train]
mode = natural
epochs = 2
batch = 32

[attack]
epsilon = 0.0
steps = 3

[output]
dir = {tmp_path / 'out'}
""")
    return cfg


def test_defaults_and_overrides():
    cfg = parse_config("[train]\nmode = sprout\n", ["train.alpha=0.05", "attack.epsilon = 0.03"])
    mode = cfg.vicinity_mode()
    assert mode.kind == "sprout" and mode.alpha == 0.05 and mode.mixup_a == 0.2 and mode.delta == 0.1
    assert cfg.attack_spec().step == pytest.approx(0.006)


@pytest.mark.parametrize("text,over", [("[train]\nfoo = 1\n", []), ("[nope]\n", []),
                                       ("", ["train.lr=1"]), ("", ["noequals"]),
                                       ("[train]\nepochs = many\n", [])])
def test_config_errors(text, over):
    with pytest.raises(ConfigError):
        cfg = parse_config(text, over)
        cfg.train_config()


def test_render_roundtrip():
    cfg = parse_config("[train]\nmode = ga\n", ["model.width=2"])
    again = parse_config(cfg.render())
    assert again.sections == cfg.sections


def test_train_then_attack_and_eval(idx_config, tmp_path):
    out = tmp_path / "out"
    assert run("train", idx_config) == 0
    rows = list(csv.reader(open(out / "train" / "history.csv")))
    assert len(rows) == 1 + 2
    assert (out / "train" / "checkpoint.ckpt").exists()
    assert (out / "train" / "config.ini").exists()
    meta = json.loads((out / "train" / "meta.json").read_text())
    assert meta["train_seed"] == 0 and "numpy" in meta["versions"]
    ck = f"eval.checkpoint={out / 'train' / 'checkpoint.ckpt'}"
    assert run("attack", idx_config, [ck]) == 0
    assert run("eval", idx_config, [ck, "eval.suites=clean,invariance"]) == 0
    robust = json.loads((out / "attack" / "report.json").read_text())["metrics"]["robust_acc"]
    ev = json.loads((out / "eval" / "report.json").read_text())
    assert robust == ev["metrics"]["clean_acc"]
    assert ev["metrics"]["grayscale_acc"] is None and ev["notes"]


def test_rerun_from_copied_config_is_bit_exact(idx_config, tmp_path):
    out = tmp_path / "out" / "train"
    assert run("train", idx_config) == 0
    first = (out / "checkpoint.ckpt").read_bytes(), (out / "report.json").read_bytes()
    copied = tmp_path / "copied.ini"
    copied.write_text((out / "config.ini").read_text())
    assert run("train", copied) == 0
    assert ((out / "checkpoint.ckpt").read_bytes(), (out / "report.json").read_bytes()) == first


def test_landscape_diversity_bench(idx_config, tmp_path):
    out = tmp_path / "out"
    assert run("train", idx_config) == 0
    ck = out / "train" / "checkpoint.ckpt"
    assert run("landscape", idx_config, [f"eval.checkpoint={ck}", "eval.landscape_examples=2",
                                         "eval.n_grid=4"]) == 0
    grid = list(csv.reader(open(out / "landscape" / "grid_0000.csv")))
    assert len(grid) == 6 and len(grid[0]) == 6
    assert run("diversity", idx_config, [f"eval.diversity_models=a={ck},b={ck}", "eval.n_examples=8"]) == 0
    cos = list(csv.reader(open(out / "diversity" / "cosine.csv")))
    assert cos[1][1] == "NA" and float(cos[1][2]) == pytest.approx(1.0)
    assert run("bench", idx_config, ["eval.bench_modes=natural,sprout", "eval.bench_epochs=1"]) == 0
    rows = list(csv.DictReader(open(out / "bench" / "runtime.csv")))
    assert [r["method"] for r in rows] == ["natural", "sprout"] and rows[0]["ratio_to_natural"] == "1.0000"


def test_ablate_emits_eight_reports(idx_config, tmp_path):
    assert run("ablate", idx_config, ["train.epochs=1", "eval.n_examples=8"]) == 0
    reports = sorted((tmp_path / "out" / "ablate").glob("*/report.json"))
    assert len(reports) == 8 == len(ABLATION_ROWS)
    labels = {json.loads(p.read_text())["provenance"]["row"] for p in reports}
    assert labels == {r[0] for r in ABLATION_ROWS}


def test_error_exit_codes(idx_config, tmp_path, capsys):
    assert main(["train", str(idx_config), "--set", "train.bogus=1"]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and json.loads(err[0])["exit_code"] == 2
    assert main(["train", str(tmp_path / "missing.ini")]) == 2
    assert main(["attack", str(idx_config), "--set", f"eval.checkpoint={tmp_path / 'nope'}"]) == 3
    assert main(["train", str(idx_config), "--set", f"dataset.train_images={tmp_path / 'nope'}"]) == 3
    assert main(["train", str(idx_config), "--set", "dataset.num_classes=3"]) == 3
    capsys.readouterr()


def test_k_mismatch_checkpoint(idx_config, tmp_path, capsys):
    assert run("train", idx_config) == 0
    ck = tmp_path / "out" / "train" / "checkpoint.ckpt"
    code = run("attack", idx_config, [f"eval.checkpoint={ck}", "dataset.kind=blobs"])
    assert code == 3
    assert "K=10" in json.loads(capsys.readouterr().err.strip())["message"]


def test_numeric_failure_exit_code(idx_config):
    assert run("train", idx_config, ["train.lr_theta=1e200"]) == 4


def test_output_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    cfg = parse_config("")
    assert cfg.output_dir() == tmp_path / "root"
