import math

import numpy as np
import pytest

import esam3


def test_losses_match_closed_forms():
    probs = np.array([[0.9, 0.1], [0.8, 0.2]])
    target = np.array([[1.0, 0.0], [1.0, 0.0]])
    inter = (probs * target).sum()
    expect = 1 - (2 * inter + 1) / (probs.sum() + target.sum() + 1)
    assert esam3.dice_loss(probs, target) == pytest.approx(expect, abs=1e-12)
    assert esam3.score_bce(np.array([0.0]), np.array([1.0])) == pytest.approx(math.log(2), abs=1e-12)
    assert esam3.feature_mse(np.ones((2, 2, 2)), np.zeros((2, 2, 2))) == pytest.approx(1.0)


def test_hungarian_against_enumeration():
    from itertools import permutations

    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(1, 6))
        cost = rng.integers(0, 4, size=(n, n)).astype(float)
        best = min(permutations(range(n)), key=lambda p: (sum(cost[r, p[r]] for r in range(n)), p))
        cols, total = esam3.hungarian(cost)
        assert tuple(cols) == best
        assert total == sum(cost[r, best[r]] for r in range(n))


def test_metrics():
    a = np.zeros((4, 4))
    a[0, :2] = 1
    b = np.zeros((4, 4))
    b[0, 1:3] = 1
    assert esam3.mask_iou(a, b) == pytest.approx(1 / 3)
    assert esam3.eval_jf([[a, b]], [[a, b]]) == (1.0, 1.0, 1.0)
    miou, per_scene = esam3.eval_miou([[a, a], [b]], [[a, b], [b]])
    assert miou == pytest.approx(sum(per_scene) / len(per_scene), abs=1e-12)


def test_attention_cost_and_zoo():
    assert esam3.attention_cost(4096, 128, 64, 16)[2] == 32.0
    assert esam3.attention_cost(128, 128, 64, 16)[2] == 1.0
    zoo = esam3.model_zoo()
    assert len(zoo) == 9
    smallest = min(zoo, key=lambda e: e["encoder_params"])
    assert smallest["name"] == "ES-EV-S"


def test_scenes_are_seeded():
    cfg = {"image_size": 64, "min_radius": 8, "max_radius": 12, "min_visible_pixels": 30}
    a = esam3.gen_scene(5, cfg)
    b = esam3.gen_scene(5, cfg)
    assert a["image"].shape == (64, 64, 3)
    assert np.array_equal(a["image"], b["image"])
    for inst in a["instances"]:
        assert inst["mask"].sum() >= 30
    clip = esam3.gen_clip(5, 3, cfg)
    assert [f["frame_index"] for f in clip] == [0, 1, 2]


def test_schedule_and_errors():
    cfg = esam3.desk_preset(1)
    assert esam3.lr_at(0, cfg) == 0.0
    assert esam3.lr_at(cfg["total_steps"], cfg) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(esam3.Error):
        esam3.lr_at(-1, cfg)
    with pytest.raises(esam3.Error):
        esam3.desk_preset(4)


def test_zero_step_training_run(tmp_path):
    cfg = esam3.desk_preset(1)
    cfg["total_steps"] = 0
    log = esam3.train(1, str(tmp_path / "run"), cfg, model="ES-EV-S")
    assert log == []
    assert (tmp_path / "run" / "checkpoint" / "manifest.json").exists()
    miou, per_scene = esam3.eval_miou_checkpoint(str(tmp_path / "run" / "checkpoint"), count=2, predictor="teacher")
    assert miou == 1.0 and len(per_scene) == 2
