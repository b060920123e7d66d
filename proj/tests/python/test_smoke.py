import math
import os
import subprocess

import numpy as np
import pytest

import densepillars as dp


def test_analyze_counts():
    rep = dp.analyze()
    assert rep["dense"]["backbone"]["params"] == 468992
    assert rep["baseline"]["backbone"]["params"] == 4207616
    assert rep["dense"]["neck"] == rep["baseline"]["neck"]
    assert 8.5 <= rep["param_ratio"] <= 9.5
    assert 1.45 <= rep["mac_ratio"] <= 1.6
    csv = dp.analyze_csv().splitlines()
    assert csv[0] == "component,params,macs"
    assert "dense.backbone,468992,19089063936" in csv


def test_growth_and_config():
    assert dp.growth_rates("doubling:32") == [32, 64, 128]
    assert dp.count_backbone_params("fixed:16") < dp.count_backbone_params("fixed:32")
    rows = {k: (v, src) for k, v, src in dp.describe_config(overrides={"train.steps": "9"})}
    assert rows["train.steps"] == ("9", "flag")
    assert rows["seed"][1] == "default"
    with pytest.raises(dp.ConfigError, match="nope.key"):
        dp.analyze(overrides={"nope.key": "1"})


def test_iou_and_nms():
    a = (0, 0, 0, 1, 1, 1, 0)
    b = (0, 0, 0, 1, 1, 1, math.pi / 4)
    assert dp.rotated_iou_bev(a, b) == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    assert dp.rotated_iou_bev(a, a) == pytest.approx(1.0)
    boxes = np.array([[0, 0, 0, 1.6, 3.9, 1.5, 0], [0.2, 0, 0, 1.6, 3.9, 1.5, 0], [9, 0, 0, 1.6, 3.9, 1.5, 0]])
    keep = dp.nms_bev(boxes, [0.5, 0.9, 0.7], ["Car", "Car", "Car"], 0.01)
    assert keep == [1, 2]
    with pytest.raises(ValueError):
        dp.nms_bev(np.zeros((2, 6)), [0.1, 0.2], ["Car", "Car"], 0.5)


def test_bin_round_trip(tmp_path):
    pts, labels = dp.synth_scene(seed=3, boxes=3, x_range=[0, 20.48], y_range=[-10.24, 10.24])
    assert pts.shape[1] == 4 and pts.dtype == np.float32
    assert labels["boxes"].shape == (3, 7)
    path = tmp_path / "f.bin"
    dp.write_kitti_bin(path, pts)
    assert np.array_equal(dp.read_kitti_bin(path), pts)
    with pytest.raises(dp.IoError):
        dp.read_kitti_bin(tmp_path / "missing.bin")


def test_train_and_detect(tmp_path):
    small = {
        "grid.x_max": "10.24",
        "grid.y_min": "-5.12",
        "grid.y_max": "5.12",
        "train.steps": "2",
        "train.scenes": "2",
        "synth.boxes": "2",
    }
    out = dp.train(tmp_path / "run", overrides=small)
    assert len(out["history"]) == 2
    assert all(math.isfinite(r[-1]) for r in out["history"])
    det = dp.Detector(out["checkpoint"], {"infer.score_threshold": "0.0"})
    pts, _ = dp.synth_scene(seed=1, boxes=2, x_range=[0, 10.24], y_range=[-5.12, 5.12])
    res = det.detect(pts)
    assert res["boxes"].shape[1] == 7
    assert len(res["classes"]) == len(res["scores"]) == res["boxes"].shape[0]
    with pytest.raises(dp.ConfigError):
        dp.Detector(out["checkpoint"], {"grid.x_max": "20.48"})


CLI = os.environ.get("DPP_CLI")


@pytest.mark.skipif(not CLI, reason="DPP_CLI not set")
def test_cli_exit_codes(tmp_path):
    ok = subprocess.run([CLI, "analyze", "--csv", str(tmp_path / "a.csv")], capture_output=True, text=True)
    assert ok.returncode == 0
    assert "dense.backbone,468992" in (tmp_path / "a.csv").read_text()
    bad_key = subprocess.run([CLI, "analyze", "--set", "train.stepz=3"], capture_output=True, text=True)
    assert bad_key.returncode == 1
    assert "train.stepz" in bad_key.stderr
    missing = subprocess.run(
        [CLI, "eval", "--pred", str(tmp_path / "p"), "--labels", str(tmp_path / "none")], capture_output=True
    )
    assert missing.returncode == 2
    bad_env = subprocess.run(
        [CLI, "infer", "--checkpoint", "x", "--input", "y", "--out", str(tmp_path)],
        capture_output=True,
        env={**os.environ, "DPP_NUM_THREADS": "zero"},
    )
    assert bad_env.returncode == 1
