"""End-to-end command-line round trips on a small real corpus: synth,
preprocess (idempotence + corrupt-cache recovery), run, experiment,
report, kernels, and exit-code mapping."""

import csv
import glob
import json
import os

import numpy as np
import pytest

import gsenet.cli as cli
from gsenet.cli import main as cli_main
from gsenet.config import CACHE_ENV_VAR
from gsenet.errors import NumericError
from gsenet.synth import read_manifest
from gsenet.tensor import load_tensor

# narrow model + one epoch: every CLI path in seconds, not minutes
TINY_SET = []
for _kv in ("model.cardinality=2", "model.stage_widths=4,4,8,8",
            "model.se_reduction=2", "model.stem_channels=4",
            "model.input_size=32", "train.epochs=1", "train.batch_size=8",
            "train.lr=0.003", "augment.enabled=false"):
    TINY_SET += ["--set", _kv]


def test_synth_corpus_layout(corpus_dir):
    rows = read_manifest(os.path.join(corpus_dir, "manifest.csv"))
    assert len(rows) == 8  # 2 recordings for each of the 4 classes
    by_class = {}
    for row in rows:
        by_class.setdefault(row["class_label"], []).append(row)
        assert float(row["duration_s"]) == 150.0
        wav = os.path.join(corpus_dir, row["path"])
        assert os.path.isfile(wav)
    assert sorted(by_class) == ["cargo", "passenger", "tanker", "tug"]


def test_preprocess_cache_contents(seg_cache):
    files = sorted(glob.glob(os.path.join(seg_cache, "*.gset")))
    assert len(files) == 72  # 8 recordings x 9 half-overlapped segments
    spec = load_tensor(files[0])
    assert spec.ndim == 2
    assert spec.shape[0] == 255  # frequency bins
    assert spec.dtype == np.float32


def test_preprocess_is_idempotent(corpus_manifest, seg_cache, capsys):
    rc = cli_main(["preprocess", "--manifest", corpus_manifest,
                   "--cache", seg_cache])
    assert rc == 0
    out = capsys.readouterr().out
    assert "cached 0 spectrograms (72 already valid)" in out


def test_preprocess_recovers_corrupt_cache(corpus_manifest, seg_cache, capsys):
    victim = sorted(glob.glob(os.path.join(seg_cache, "*.gset")))[0]
    original = load_tensor(victim)
    good = open(victim, "rb").read()
    with open(victim, "wb") as fh:
        fh.write(good[: len(good) // 2])  # truncate: unreadable tensor
    rc = cli_main(["preprocess", "--manifest", corpus_manifest,
                   "--cache", seg_cache])
    assert rc == 0
    assert "cached 1 spectrograms (71 already valid)" in capsys.readouterr().out
    restored = load_tensor(victim)  # re-derived bit-for-bit from the wav
    assert np.array_equal(restored, original)


@pytest.fixture(scope="module")
def run_artifacts(corpus_manifest, seg_cache, tmp_path_factory):
    out_dir = str(tmp_path_factory.mktemp("runs"))
    rc = cli_main(["run", "--task", "1", "--manifest", corpus_manifest,
                   "--cache", seg_cache, "--out", out_dir] + TINY_SET)
    assert rc == 0
    return out_dir


def test_run_emits_results_history_chart_checkpoint(run_artifacts):
    out_dir = run_artifacts
    (result_path,) = glob.glob(os.path.join(out_dir, "task1_none_*.json"))
    with open(result_path) as fh:
        payload = json.load(fh)
    assert payload["task"] == 1
    assert payload["ablation"] == "none"
    assert payload["plan"]["task"] == 1
    assert len(payload["per_fold"]) == 5
    mccs = [f["mcc"] for f in payload["per_fold"]]
    assert payload["aggregate"]["mean_mcc"] == pytest.approx(np.mean(mccs))
    assert payload["aggregate"]["std_mcc"] == pytest.approx(np.std(mccs))
    assert len(payload["config_hash"]) == 12

    histories = glob.glob(os.path.join(out_dir, "task1_none_*_history_*.csv"))
    assert len(histories) == 5
    with open(histories[0], newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1  # one epoch
    assert {"epoch", "train_loss", "val_mcc", "seconds"} == set(rows[0])

    assert glob.glob(os.path.join(out_dir, "task1_none_*.svg"))
    (ckpt,) = glob.glob(os.path.join(out_dir, "task1_none_*_ckpt"))
    assert os.path.isfile(os.path.join(ckpt, "manifest.txt"))
    with open(os.path.join(ckpt, "model_config.json")) as fh:
        saved = json.load(fh)
    assert saved["stage_widths"] == [4, 4, 8, 8]
    assert saved["input_size"] == 32


def test_run_ablation_changes_artifact_names(corpus_manifest, seg_cache,
                                             run_artifacts):
    out_dir = run_artifacts
    rc = cli_main(["run", "--task", "3", "--ablate", "both", "--manifest",
                   corpus_manifest, "--cache", seg_cache, "--out", out_dir]
                  + TINY_SET)
    assert rc == 0
    (result_path,) = glob.glob(os.path.join(out_dir, "task3_both_*.json"))
    with open(result_path) as fh:
        payload = json.load(fh)
    assert payload["ablation"] == "both"
    assert len(payload["per_fold"]) == 5


def test_kernels_renders_sheet_from_checkpoint(run_artifacts, tmp_path):
    (ckpt,) = glob.glob(os.path.join(run_artifacts, "task1_none_*_ckpt"))
    out_png = str(tmp_path / "kernels.png")
    assert cli_main(["kernels", "--checkpoint", ckpt, "--out", out_png]) == 0
    from PIL import Image
    with Image.open(out_png) as img:
        assert img.mode == "L"
        assert img.size[0] > 0
    assert cli_main(["kernels", "--checkpoint", str(tmp_path / "nope"),
                     "--out", out_png]) == 2


def test_experiment_grid_a(corpus_manifest, seg_cache, tmp_path):
    out_dir = str(tmp_path / "exp")
    rc = cli_main(["experiment", "--kind", "a", "--manifest", corpus_manifest,
                   "--cache", seg_cache, "--out", out_dir] + TINY_SET)
    assert rc == 0
    (csv_path,) = glob.glob(os.path.join(out_dir, "experiment_a_*.csv"))
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["size"], r["distance"]) for r in rows] == \
        [("1", "1"), ("1", "2"), ("1", "3"), ("1", "4")]
    for row in rows:
        assert len(row["runs"].split(";")) == 2  # forward + mirrored
        assert -1.0 <= float(row["mean_mcc"]) <= 1.0
    (json_path,) = glob.glob(os.path.join(out_dir, "experiment_a_*.json"))
    with open(json_path) as fh:
        payload = json.load(fh)
    assert len(payload["per_fold"]) == 8
    assert len(payload["points"]) == 4
    assert glob.glob(os.path.join(out_dir, "experiment_a_*.svg"))


def test_report_summarizes_and_draws_convergence(run_artifacts, capsys):
    rc = cli_main(["report", "--results", run_artifacts])
    assert rc == 0
    out = capsys.readouterr().out
    assert "task" in out and "mean_mcc" in out
    assert os.path.isfile(os.path.join(run_artifacts, "summary.txt"))
    assert os.path.isfile(os.path.join(run_artifacts, "summary.csv"))
    convergence = os.path.join(run_artifacts, "convergence.svg")
    assert os.path.isfile(convergence)
    text = open(convergence).read()
    assert "<polyline" in text


def test_cache_dir_env_var_is_honored(tmp_path, monkeypatch):
    corpus = str(tmp_path / "c")
    rc = cli_main(["synth", "--per-class", "1", "--duration", "105",
                   "--out", corpus, "--seed", "5", "--classes", "1"])
    assert rc == 0
    cache = tmp_path / "envcache"
    monkeypatch.setenv(CACHE_ENV_VAR, str(cache))
    rc = cli_main(["preprocess", "--manifest",
                   os.path.join(corpus, "manifest.csv")])
    assert rc == 0
    files = glob.glob(str(cache / "*.gset"))
    assert files
    assert load_tensor(files[0]).shape[0] == 255


def test_usage_errors_exit_code_1(capsys):
    assert cli_main([]) == 1
    assert cli_main(["run", "--task", "9"]) == 1
    assert cli_main(["synth", "--per-class", "1", "--out", "/tmp/x",
                     "--classes", "9"]) == 1
    assert cli_main(["run", "--task", "1", "--set", "nonsense"]) == 1
    assert "usage error" in capsys.readouterr().err


def test_data_errors_exit_code_2(tmp_path, capsys):
    assert cli_main(["preprocess", "--manifest",
                     str(tmp_path / "nope.csv")]) == 2
    assert cli_main(["report", "--results", str(tmp_path / "missing")]) == 2
    assert cli_main(["run", "--task", "1", "--manifest",
                     str(tmp_path / "nope.csv"), "--cache",
                     str(tmp_path)] + TINY_SET) == 2
    assert "data error" in capsys.readouterr().err


def test_numeric_errors_exit_code_3(monkeypatch, capsys):
    def boom(args):
        raise NumericError("non-finite gradient in stem.sigma")

    monkeypatch.setitem(cli._COMMANDS, "report", boom)
    assert cli_main(["report", "--results", "anywhere"]) == 3
    assert "numeric failure" in capsys.readouterr().err
