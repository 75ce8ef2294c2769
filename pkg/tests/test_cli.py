import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from hierseg.cli import main
from hierseg.datapipe import load_dataset
from hierseg.pseudo_gt import dumps_dense_gt, weak_pseudo_gt

GOLDEN = Path(__file__).parent / "golden" / "mine"

TRAIN_CFG = """\
model: {channels: [4, 6], adapt_width: 4, downsample: 2}
batch: {per_pixel: 1, bbox: 2, image_level: 1, crop: [16, 16]}
optimizer: {epochs: 2}
data: {per_pixel: pp, bbox: bb, image_level: il, val: val}
"""


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    for mode, n, seed, name in [("per_pixel", 4, 1, "pp"), ("bbox", 5, 2, "bb"),
                                ("image_level", 3, 3, "il"), ("per_pixel", 3, 4, "val")]:
        assert main(["synth", "--mode", mode, "--n", str(n), "--seed", str(seed),
                     "--size", "16", "16", "--out", str(root / name)]) == 0
    (root / "train.yaml").write_text(TRAIN_CFG)
    return root


def test_synth_deterministic(tmp_path, capsys):
    for d in ("a", "b"):
        code, out, _ = run(["synth", "--mode", "bbox", "--n", "3", "--seed", "5", "--out", tmp_path / d,
                            "--json"], capsys)
        assert code == 0 and json.loads(out)["count"] == 3
    for name in ["annotations.jsonl", "manifest.json"] + [f"images/{f}" for f in os.listdir(tmp_path / "a/images")]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_generate_gt_matches_in_memory(workspace, tmp_path, capsys, tax):
    code, out, _ = run(["generate-gt", "--data", workspace / "bb", "--out", tmp_path / "gt", "--json"], capsys)
    assert code == 0 and json.loads(out)["images"] == 5
    for rec in load_dataset(workspace / "bb"):
        probs, cov = dumps_dense_gt(weak_pseudo_gt(rec.annotations, rec.size, tax), tax)
        assert (tmp_path / "gt" / f"{rec.image_id}.hseg").read_bytes() == probs
        assert (tmp_path / "gt" / f"{rec.image_id}.cov").read_bytes() == cov


def test_mine_reproduces_golden_files(tmp_path, capsys):
    code, out, _ = run(["mine", "--meta", GOLDEN / "metadata.csv", "--k-bbox", "8", "--k-image", "6",
                        "--out", tmp_path, "--json"], capsys)
    assert code == 0
    for name in ("bbox_subset.txt", "image_level_subset.txt"):
        assert (tmp_path / name).read_text() == (GOLDEN / name).read_text()
    summary = json.loads(out)
    assert summary["bbox_selected"] == 8 and summary["image_level_selected"] == 6


def test_mine_custom_weights(tmp_path, capsys):
    (tmp_path / "w.yaml").write_text("dog: 1\n")
    code, _, _ = run(["mine", "--meta", GOLDEN / "metadata.csv", "--weights", tmp_path / "w.yaml",
                      "--k-bbox", "2", "--k-image", "0", "--out", tmp_path / "o"], capsys)
    assert code == 0
    (tmp_path / "bad.yaml").write_text("dog: 0\n")
    code, _, err = run(["mine", "--meta", GOLDEN / "metadata.csv", "--weights", tmp_path / "bad.yaml",
                        "--out", tmp_path / "o2"], capsys)
    assert code != 0 and "integer" in err


def test_train_twice_bit_identical(workspace, capsys):
    for d in ("r1", "r2"):
        code, out, _ = run(["train", "--config", workspace / "train.yaml", "--seed", "7",
                            "--out", workspace / d, "--json"], capsys)
        assert code == 0 and json.loads(out)["seed"] == 7
    for name in ("checkpoint.hseg", "metrics.json", "train_log.jsonl"):
        assert (workspace / "r1" / name).read_bytes() == (workspace / "r2" / name).read_bytes()


def test_eval_report(workspace, tmp_path, capsys, tax):
    code, _, _ = run(["train", "--config", workspace / "train.yaml", "--out", workspace / "r3"], capsys)
    assert code == 0
    code, out, _ = run(["eval", "--checkpoint", workspace / "r3" / "checkpoint.hseg",
                        "--data", workspace / "val", "--out", tmp_path, "--json"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["classes"] == tax.leaf_names
    assert len(rep["iou"]) == len(tax.leaf_names) and 0 <= rep["miou"] <= 1
    assert json.loads((tmp_path / "eval.json").read_text()) == rep
    code, out, _ = run(["eval", "--checkpoint", workspace / "r3" / "checkpoint.hseg",
                        "--data", workspace / "val"], capsys)
    assert code == 0 and "mean" in out


@pytest.mark.parametrize("argv", [
    ["train", "--config", "nope.yaml", "--out", "x"],
    ["mine", "--meta", "nope.csv", "--out", "x"],
    ["eval", "--checkpoint", "nope.hseg", "--data", "."],
    ["generate-gt", "--data", "nope", "--out", "x"],
])
def test_errors_exit_nonzero(argv, tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, _, err = run(argv, capsys)
    assert code == 1 and "error" in err


def test_missing_resume_checkpoint(workspace, tmp_path, capsys):
    code, _, err = run(["train", "--config", workspace / "train.yaml", "--out", tmp_path,
                        "--resume", tmp_path / "none.hseg", "--json"], capsys)
    assert code == 1 and "resume" in err


def test_eval_rejects_weak_dataset(workspace, tmp_path, capsys):
    (tmp_path / "c.hseg").write_bytes(b"")
    code, _, err = run(["eval", "--checkpoint", tmp_path / "c.hseg",
                        "--data", workspace / "bb"], capsys)
    assert code == 1 and "per-pixel" in err


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hierseg.cli", "synth", "--n", "1", "--out",
                           str(tmp_path / "s"), "--json"], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["count"] == 1
    proc = subprocess.run([sys.executable, "-m", "hierseg.cli", "bogus"], capture_output=True, text=True)
    assert proc.returncode != 0
