import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from semask.masking import (
    BinaryMask,
    MaskPredictor,
    MaskPredictorConfig,
    apply_mask,
    build_mask_predictor,
    gumbel_binary,
    gumbel_binary_tensor,
    predict_binary_mask,
    predictor_input,
)
from semask.palettes import rescuenet_palette
from semask.scenes import SceneConfig, generate_scene
from semask.segmentation import mask_from_labels

PALETTE = rescuenet_palette()


def test_saturated_logits_are_deterministic():
    high = gumbel_binary(np.full((64, 64), 20.0, dtype=np.float32), 0.1, hard=True, seed=0)
    low = gumbel_binary(np.full((64, 64), -20.0, dtype=np.float32), 0.1, hard=True, seed=0)
    assert (high.values == 1.0).all() and high.mode == "hard"
    assert (low.values == 0.0).all()


def test_zero_logits_sample_half_keep():
    mask = gumbel_binary(np.zeros((100, 100), dtype=np.float32), 1.0, hard=True, seed=7)
    assert mask.density == pytest.approx(0.5, abs=0.02)


def test_hard_values_are_exactly_binary():
    logits = np.random.default_rng(0).normal(size=(32, 32)).astype(np.float32)
    mask = gumbel_binary(logits, 0.5, hard=True, seed=1)
    assert set(np.unique(mask.values)) <= {0.0, 1.0}


@given(st.integers(0, 10_000), st.floats(min_value=0.05, max_value=5.0))
@settings(max_examples=30, deadline=None)
def test_soft_values_in_unit_interval(seed, tau):
    logits = np.random.default_rng(seed).normal(scale=3.0, size=(16, 16)).astype(np.float32)
    mask = gumbel_binary(logits, tau, hard=False, seed=seed)
    assert mask.mode == "soft"
    assert float(mask.values.min()) >= 0.0 and float(mask.values.max()) <= 1.0


def test_hard_equals_argmax_of_relaxation():
    logits = torch.randn(40, 40, generator=torch.Generator().manual_seed(5))
    g1 = torch.Generator().manual_seed(11)
    soft = gumbel_binary_tensor(logits, 0.7, hard=False, generator=g1)
    g2 = torch.Generator().manual_seed(11)
    hard = gumbel_binary_tensor(logits, 0.7, hard=True, generator=g2)
    assert torch.equal(hard, (soft > 0.5).float())


def test_gumbel_rejects_bad_temperature():
    with pytest.raises(ValueError):
        gumbel_binary(np.zeros((2, 2), dtype=np.float32), 0.0)
    with pytest.raises(ValueError):
        gumbel_binary(np.zeros((2, 2), dtype=np.float32), -1.0)


def test_gumbel_deterministic_given_seed():
    logits = np.zeros((20, 20), dtype=np.float32)
    a = gumbel_binary(logits, 1.0, hard=True, seed=3)
    b = gumbel_binary(logits, 1.0, hard=True, seed=3)
    c = gumbel_binary(logits, 1.0, hard=True, seed=4)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_predictor_upsamples_by_eight():
    model = build_mask_predictor(MaskPredictorConfig(), seed=0)
    mask = predict_binary_mask(
        np.random.default_rng(0).random((3, 12, 12)).astype(np.float32),
        model, tau=0.5, seed=0, hard=True,
    )
    assert mask.values.shape == (96, 96)


def test_predictor_rejects_wrong_channels():
    model = build_mask_predictor(MaskPredictorConfig(), seed=0)
    with pytest.raises(ValueError):
        predict_binary_mask(np.zeros((4, 12, 12), dtype=np.float32), model, tau=0.5)
    with pytest.raises(ValueError):
        model(torch.zeros(1, 2, 12, 12))


def test_zero_weights_give_half_soft_mask_at_any_tau():
    model = build_mask_predictor(MaskPredictorConfig(), seed=0)
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    x = np.random.default_rng(1).random((3, 12, 12)).astype(np.float32)
    for tau in (0.1, 1.0, 3.0):
        mask = predict_binary_mask(x, model, tau=tau, hard=False, sample=False)
        assert np.allclose(mask.values, 0.5)


def test_parameter_count_with_paper_widths():
    model = MaskPredictor(MaskPredictorConfig(widths=(64, 32, 16)))
    total = sum(p.numel() for p in model.parameters())
    assert total == 44_161


def test_full_res_input_geometry_resizes_back():
    config = MaskPredictorConfig(widths=(4, 3, 2), full_res_input=True)
    model = build_mask_predictor(config, seed=0)
    x = np.random.default_rng(0).random((3, 24, 24)).astype(np.float32)
    mask = predict_binary_mask(x, model, tau=0.5, seed=0, hard=True)
    assert mask.values.shape == (24, 24)


def test_predictor_input_downsamples_by_total_factor():
    config = MaskPredictorConfig()
    x = torch.arange(96 * 96 * 3, dtype=torch.float32).reshape(1, 3, 96, 96)
    small = predictor_input(x, config)
    assert small.shape == (1, 3, 12, 12)
    assert torch.allclose(small[0, 0, 0, 0], x[0, 0, :8, :8].mean())
    full = predictor_input(x, MaskPredictorConfig(full_res_input=True))
    assert full.shape == x.shape


def test_sigmoid_ablation_thresholds_without_noise():
    config = MaskPredictorConfig(discretization="sigmoid")
    model = build_mask_predictor(config, seed=0)
    x = np.random.default_rng(2).random((3, 12, 12)).astype(np.float32)
    a = predict_binary_mask(x, model, tau=1.0, hard=True)
    b = predict_binary_mask(x, model, tau=1.0, hard=True)
    assert np.array_equal(a.values, b.values)
    assert set(np.unique(a.values)) <= {0.0, 1.0}


def test_apply_mask_identity_and_null():
    sample = generate_scene(3, SceneConfig())
    mask = mask_from_labels(sample.label_map, PALETTE)
    ones = BinaryMask(np.ones((96, 96), dtype=np.float32), "hard")
    zeros = BinaryMask(np.zeros((96, 96), dtype=np.float32), "hard")
    y1 = apply_mask(mask, ones)
    assert np.array_equal(y1.rgb, mask.rgb01)
    assert np.array_equal(y1.label_map_masked, sample.label_map)
    y0 = apply_mask(mask, zeros)
    assert (y0.rgb == 0).all()
    assert (y0.label_map_masked == PALETTE.dropped_label).all()


def test_apply_mask_checkerboard_oracle():
    red = np.zeros((8, 8), dtype=np.int64)  # a constant map of one class
    from semask.palettes import ClassDef, ClassKind, ClassPalette

    palette = ClassPalette((
        ClassDef("red", (255, 0, 0), ClassKind.BACKGROUND),
        ClassDef("blue", (0, 0, 255), ClassKind.WATER),
    ))
    mask = mask_from_labels(red, palette)
    checker = ((np.indices((8, 8)).sum(axis=0)) % 2).astype(np.float32)
    y = apply_mask(mask, BinaryMask(checker, "hard"))
    for i in range(8):
        for j in range(8):
            if checker[i, j] == 1.0:
                assert np.allclose(y.rgb[i, j], [1.0, 0.0, 0.0])
                assert y.label_map_masked[i, j] == 0
            else:
                assert (y.rgb[i, j] == 0).all()
                assert y.label_map_masked[i, j] == palette.dropped_label


def test_apply_mask_idempotent_for_hard_masks():
    sample = generate_scene(6, SceneConfig())
    mask = mask_from_labels(sample.label_map, PALETTE)
    values = (np.random.default_rng(0).random((96, 96)) < 0.3).astype(np.float32)
    binary = BinaryMask(values, "hard")
    once = apply_mask(mask, binary)
    twice = apply_mask(once, binary)
    assert np.array_equal(once.rgb, twice.rgb)
    assert np.array_equal(once.label_map_masked, twice.label_map_masked)


def test_apply_mask_shape_mismatch():
    sample = generate_scene(0, SceneConfig())
    mask = mask_from_labels(sample.label_map, PALETTE)
    with pytest.raises(ValueError):
        apply_mask(mask, BinaryMask(np.ones((4, 4), dtype=np.float32), "hard"))


def test_straight_through_gradients_equal_soft_gradients():
    torch.manual_seed(0)
    model = MaskPredictor(MaskPredictorConfig(widths=(4, 3, 2)))
    x = torch.randn(1, 3, 3, 3)

    def grads(hard: bool):
        for p in model.parameters():
            p.grad = None
        g = torch.Generator().manual_seed(17)
        logits = model(x)
        out = gumbel_binary_tensor(logits, 0.8, hard=hard, generator=g)
        out.mean().backward()  # linear loss: gradients must agree exactly
        return [p.grad.clone() for p in model.parameters()]

    g_hard = grads(True)
    g_soft = grads(False)
    for a, b in zip(g_hard, g_soft):
        assert torch.equal(a, b)


def test_tau_schedule_endpoints():
    config = MaskPredictorConfig(tau_start=1.0, tau_end=0.1, anneal_steps=10)
    assert config.tau_at(0) == pytest.approx(1.0)
    assert config.tau_at(9) == pytest.approx(0.1)
    assert config.tau_at(100) == pytest.approx(0.1)
    mid = config.tau_at(5)
    assert 0.1 < mid < 1.0
