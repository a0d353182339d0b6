import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from semask.corpus import split_indices
from semask.downstream import ClassifierConfig
from semask.masking import BinaryMask, MaskPredictorConfig
from semask.palettes import ClassDef, ClassKind, ClassPalette
from semask.scenes import SceneConfig, generate_corpus
from semask.segmentation import SegConfig
from semask.training import (
    LossWeights,
    TrainSchedule,
    TrainingDiverged,
    _check_finite,
    categorical_ce,
    sparsity_loss,
    total_loss,
    train_joint,
    train_segmentation,
)


def test_sparsity_loss_values():
    assert sparsity_loss(np.zeros((8, 8))) == 0.0
    assert sparsity_loss(np.ones((8, 8))) == 1.0
    quarter = np.zeros(100)
    quarter[:25] = 1.0
    assert sparsity_loss(quarter) == 0.25
    assert sparsity_loss(BinaryMask(quarter.reshape(10, 10).astype(np.float32), "hard")) == 0.25


def test_categorical_ce_values():
    assert categorical_ce([1.0, 0.0, 0.0], 0) == 0.0
    assert categorical_ce([1 / 3] * 3, 1) == pytest.approx(math.log(3), abs=1e-9)
    assert categorical_ce([0.7, 0.2, 0.1], 0) == pytest.approx(-math.log(0.7), abs=1e-9)


def test_categorical_ce_clamps_zero_probability():
    value = categorical_ce([0.0, 1.0], 0)
    assert math.isfinite(value)
    assert value == pytest.approx(-math.log(1e-12))


def test_categorical_ce_batched_mean():
    pred = np.array([[0.7, 0.3], [0.4, 0.6]])
    want = (-math.log(0.7) - math.log(0.6)) / 2
    assert categorical_ce(pred, [0, 1]) == pytest.approx(want)


def test_categorical_ce_rejects_non_distribution():
    with pytest.raises(ValueError):
        categorical_ce([0.9, 0.3], 0)
    with pytest.raises(ValueError):
        categorical_ce([-0.1, 1.1], 0)


def test_total_loss_cases():
    assert total_loss(0.1, 0.5, LossWeights(0.0, 1.0)) == 0.5
    assert total_loss(0.1, 0.5, LossWeights(2.0, 3.0)) == pytest.approx(1.7)
    assert total_loss(0.0, 0.0, LossWeights(1.0, 1.0)) == 0.0


@given(
    st.floats(0, 10), st.floats(0, 10), st.floats(0, 5), st.floats(0, 5),
    st.floats(0.01, 4), st.floats(0.01, 4),
)
def test_total_loss_linearity(l_s1, l_s2, l_c1, l_c2, w_s, w_c):
    w = LossWeights(w_s, w_c)
    left = total_loss(l_s1 + l_s2, l_c1 + l_c2, w)
    right = total_loss(l_s1, l_c1, w) + total_loss(l_s2, l_c2, w)
    assert left == pytest.approx(right, rel=1e-12, abs=1e-12)


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(-1.0, 1.0)
    with pytest.raises(ValueError):
        LossWeights(0.0, 0.0)


def test_check_finite_raises_with_diagnostics():
    with pytest.raises(TrainingDiverged, match="epoch 3"):
        _check_finite(torch.tensor(float("nan")), epoch=3, step=7)


TINY_SEG = SegConfig(num_classes=10, backbone_widths=(4, 6, 8),
                     pool_bins=(1, 2), reduction_channels=2, head_channels=4)
TINY_SCENES = SceneConfig(height=32, width=32, qa_per_scene=2)


def small_corpus(n=10):
    samples = generate_corpus(5, n, TINY_SCENES)
    return samples, split_indices(n, seed=0), TINY_SCENES.palette()


def test_train_segmentation_deterministic():
    samples, split, palette = small_corpus()
    sched = TrainSchedule(epochs=2, batch_size=4, lr=1e-3)
    _, hist1 = train_segmentation(samples, split, palette, TINY_SEG, sched, seed=3)
    _, hist2 = train_segmentation(samples, split, palette, TINY_SEG, sched, seed=3)
    assert hist1 == hist2
    assert set(hist1[0].keys()) == {"epoch", "loss", "val_miou"}


def test_train_segmentation_rejects_empty():
    samples, _, palette = small_corpus()
    from semask.corpus import CorpusSplit

    with pytest.raises(ValueError):
        train_segmentation(samples, CorpusSplit((), (), ()), palette, TINY_SEG,
                           TrainSchedule(epochs=1), seed=0)


def test_single_class_corpus_reaches_zero_loss():
    palette = ClassPalette((
        ClassDef("only", (9, 9, 9), ClassKind.BACKGROUND),
        ClassDef("unused", (200, 9, 9), ClassKind.WATER),
    ))
    cfg = SegConfig(num_classes=1, backbone_widths=(3, 4, 4),
                    pool_bins=(1,), reduction_channels=1, head_channels=2)
    from semask.scenes import Sample
    from semask.oracles import DamageClass

    rng = np.random.default_rng(0)
    samples = [
        Sample(rng.random((16, 16, 3)).astype(np.float32),
               np.zeros((16, 16), dtype=np.int64), DamageClass.SUPERFICIAL, [])
        for _ in range(4)
    ]
    split = split_indices(4, seed=0)
    _, hist = train_segmentation(samples, split, palette, cfg,
                                 TrainSchedule(epochs=1, batch_size=2), seed=0)
    assert hist[0]["loss"] == pytest.approx(0.0, abs=1e-9)
    assert hist[0]["val_miou"] == 1.0


def joint_once(seed, mask=True, epochs=2):
    samples, split, palette = small_corpus(12)
    mask_cfg = MaskPredictorConfig(widths=(6, 5, 4), anneal_steps=epochs) if mask else None
    return train_joint(
        samples, split, palette, None, mask_cfg,
        ClassifierConfig(stem_channels=4, stage_widths=(4, 6), dropout=0.0),
        LossWeights(1.0, 1.0),
        TrainSchedule(epochs=epochs, batch_size=4, lr=1e-3),
        seed=seed, task="classification",
    )


def test_train_joint_deterministic():
    a = joint_once(4)
    b = joint_once(4)
    assert a.history == b.history
    assert set(a.history[0].keys()) == {"epoch", "L_s", "L_c", "total", "metric", "mask_density"}


def test_train_joint_baseline_has_unit_density():
    result = joint_once(4, mask=False)
    assert all(h["mask_density"] == 1.0 for h in result.history)
    assert all(h["L_s"] == 0.0 for h in result.history)


def test_train_joint_rejects_bad_task():
    samples, split, palette = small_corpus()
    with pytest.raises(ValueError):
        train_joint(samples, split, palette, None, None, ClassifierConfig(),
                    LossWeights(), TrainSchedule(epochs=1), task="segmentation")


def test_sparsity_warmup_schedule():
    sched = TrainSchedule(epochs=10, sparsity_warmup_epochs=4)
    assert sched.sparsity_scale(0) == 0.0
    assert sched.sparsity_scale(2) == 0.5
    assert sched.sparsity_scale(4) == 1.0
    assert sched.sparsity_scale(9) == 1.0
    assert TrainSchedule(epochs=5).sparsity_scale(0) == 1.0
