import json

import pytest

from glass.cli import main
from glass.imaging import synth_corpus

TINY = ["--set", "embed_dim=4", "--set", "attn_hidden=4", "--set", "widths=[4]"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    synth_corpus(4, 448, 448, seed=2, out_dir=root, ratios=(0.5, 0.25, 0.25))
    return root


def _run(*argv):
    return main(["--threads", "1", *map(str, argv)])


def _bytes(d, name):
    return (d / name).read_bytes()


def test_coverage_prints_and_is_deterministic(tmp_path, capsys):
    assert _run("coverage", "--height", 768, "--width", 1024, "--crops", 10, "--approx") == 0
    out = capsys.readouterr().out.splitlines()
    assert out == ["43.8 entire", "approx 48.3"]
    for d in ("a", "b"):
        assert _run("coverage", "--height", 480, "--width", 640, "--crops", 6,
                    "--mc-trials", 50, "--seed", 3, "--out-dir", tmp_path / d) == 0
    assert _bytes(tmp_path / "a", "coverage.json") == _bytes(tmp_path / "b", "coverage.json")
    assert json.loads(_bytes(tmp_path / "a", "coverage.json"))["schema_version"] == 1


def test_coverage_small_image_fails(capsys):
    assert _run("coverage", "--height", 100, "--width", 448, "--crops", 4) != 0
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "smaller" in err[0]


def test_coverage_table_files(tmp_path):
    assert _run("coverage-table", "--sizes", "640x480,256x256", "--ns", "2,6", "--out-dir", tmp_path) == 0
    csv_lines = (tmp_path / "coverage_table.csv").read_text().splitlines()
    assert len(csv_lines) == 5
    assert "32.7 (grid)" in (tmp_path / "coverage_table.md").read_text()


def test_sample_deterministic(tmp_path, corpus):
    img = corpus / "fake" / "fake_00000.png"
    for d in ("a", "b"):
        assert _run("sample", "--image", img, "--crops", 3, "--seed", 5, "--out-dir", tmp_path / d) == 0
    for name in ("rects.json", "crop_00.png", "crop_02.png", "run.json"):
        assert _bytes(tmp_path / "a", name) == _bytes(tmp_path / "b", name)
    rects = json.loads(_bytes(tmp_path / "a", "rects.json"))
    assert rects["strategy"] == "grid" and len(rects["rects"]) == 3


def test_sample_env_seed(tmp_path, corpus, monkeypatch):
    img = corpus / "real" / "real_00001.png"
    monkeypatch.setenv("GLASS_SEED", "5")
    assert _run("sample", "--image", img, "--crops", 3, "--out-dir", tmp_path / "env") == 0
    assert _run("sample", "--image", img, "--crops", 3, "--seed", 5, "--out-dir", tmp_path / "flag") == 0
    assert _bytes(tmp_path / "env", "rects.json") == _bytes(tmp_path / "flag", "rects.json")


def test_sample_small_image_needs_upscale(tmp_path):
    from glass.imaging import ImageBuf, save_png
    import numpy as np

    path = tmp_path / "small.png"
    save_png(ImageBuf(np.full((3, 100, 150), 0.5, dtype=np.float32)), path)
    assert _run("sample", "--image", path, "--crops", 2, "--out-dir", tmp_path / "o") != 0
    assert _run("sample", "--image", path, "--crops", 2, "--upscale", "--out-dir", tmp_path / "o") == 0


def _history_without_timing(d):
    return [",".join(line.split(",")[:4]) for line in (d / "history.csv").read_text().splitlines()]


def test_train_and_eval_deterministic(tmp_path, corpus):
    for d in ("a", "b"):
        assert _run("train", "--data", corpus, "--epochs", 2, "--batch-size", 2, "--seed", 1,
                    *TINY, "--out-dir", tmp_path / d) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert _bytes(a, "model.ckpt") == _bytes(b, "model.ckpt")
    assert _bytes(a, "best.ckpt") == _bytes(b, "best.ckpt")
    assert _bytes(a, "run.json") != b""
    assert _history_without_timing(a) == _history_without_timing(b)
    for d in ("ea", "eb"):
        assert _run("eval", "--data", corpus, "--checkpoint", a / "best.ckpt", "--seed", 1,
                    "--out-dir", tmp_path / d) == 0
    for name in ("metrics.json", "predictions.json"):
        assert _bytes(tmp_path / "ea", name) == _bytes(tmp_path / "eb", name)
    # the recorded run config reproduces the run
    assert _run("train", "--config", a / "run.json", "--out-dir", tmp_path / "c") == 0
    assert _bytes(tmp_path / "c", "model.ckpt") == _bytes(a, "model.ckpt")


def test_config_rejects_unknown_keys(tmp_path, corpus, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"data": str(corpus), "learning_rate": 0.1}))
    assert _run("train", "--config", cfg, "--out-dir", tmp_path / "o") != 0
    assert "learning_rate" in capsys.readouterr().err
    assert _run("train", "--data", corpus, "--set", "nope=1", "--out-dir", tmp_path / "o") != 0


def test_weights_and_compare(tmp_path, corpus):
    assert _run("compare", "--data", corpus, "--epochs", 1, "--batch-size", 4, *TINY,
                "--out-dir", tmp_path) == 0
    lines = (tmp_path / "compare.csv").read_text().splitlines()
    assert [line.split(",")[0] for line in lines[1:]] == ["glass", "global_only"]
    assert _run("weights", "--checkpoint", tmp_path / "glass_best.ckpt", "--out-dir", tmp_path / "w") == 0
    stats = (tmp_path / "w" / "weights_stats.csv").read_text().splitlines()
    assert stats[1].startswith("global,8,") and stats[2].startswith("local,8,")
    assert _run("weights", "--checkpoint", tmp_path / "global_only_best.ckpt", "--out-dir", tmp_path / "w") != 0


def test_synth_counts(tmp_path):
    assert _run("synth", "--count", 2, "--val-count", 1, "--test-count", 1, "--seed", 0,
                "--out-dir", tmp_path) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    splits = [e["split"] for e in manifest["entries"]]
    assert (splits.count("train"), splits.count("val"), splits.count("test")) == (4, 2, 2)


def test_sample_forced_grid_and_fallback(tmp_path, corpus, capsys):
    img = corpus / "real" / "real_00000.png"
    assert _run("sample", "--image", img, "--crops", 4, "--seed", 1, "--out-dir", tmp_path / "g") == 0
    rects = json.loads(_bytes(tmp_path / "g", "rects.json"))["rects"]
    assert sorted((r["top"], r["left"]) for r in rects) == [(0, 0), (0, 224), (224, 0), (224, 224)]
    assert "strategy grid, grid size 2" in capsys.readouterr().out
    assert _run("sample", "--image", img, "--crops", 5, "--seed", 1, "--out-dir", tmp_path / "e") == 0
    assert "strategy entire" in capsys.readouterr().out
    assert json.loads(_bytes(tmp_path / "e", "rects.json"))["strategy"] == "entire"


def test_weights_default_width(tmp_path):
    from glass.model import ArchConfig, build_model, save_checkpoint

    save_checkpoint(build_model(ArchConfig(), 0), tmp_path / "m.ckpt")
    assert _run("weights", "--checkpoint", tmp_path / "m.ckpt", "--out-dir", tmp_path) == 0
    stats = (tmp_path / "weights_stats.csv").read_text().splitlines()
    assert [line.split(",")[:2] for line in stats[1:]] == [["global", "128"], ["local", "128"]]
