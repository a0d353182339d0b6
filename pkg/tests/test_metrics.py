import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st
from torch import nn

from semask.masking import MaskPredictor, MaskPredictorConfig
from semask.metrics import (
    class_iou,
    count_parameters,
    error_rate,
    feature_fidelity,
    jaccard,
    normalize_unit_max,
    support,
)


def test_jaccard_basics():
    assert jaccard({1, 2}, {1, 2}) == 1.0
    assert jaccard({1}, {2}) == 0.0
    assert jaccard({1, 2, 3}, {2, 3, 4}) == 0.5  # |∩|=2, |∪|=4
    assert jaccard(set(), set()) == 1.0  # identical empty supports


small_sets = st.sets(st.integers(min_value=0, max_value=30), max_size=12)


@given(small_sets, small_sets)
def test_jaccard_properties(a, b):
    j = jaccard(a, b)
    assert 0.0 <= j <= 1.0
    assert j == jaccard(b, a)
    assert (j == 1.0) == (a == b)


def test_class_iou_identity_and_complement():
    truth = np.zeros((4, 4), dtype=int)
    truth[:, 2:] = 1
    ious, miou = class_iou(truth, truth, 2)
    assert np.allclose(ious, [1.0, 1.0]) and miou == 1.0
    ious, miou = class_iou(1 - truth, truth, 2)
    assert np.allclose(ious, [0.0, 0.0]) and miou == 0.0


def test_class_iou_counted_fixture():
    # class 1: truth 100 px, prediction overlaps 50 and covers 25 extra
    truth = np.zeros((20, 20), dtype=int)
    truth[:5, :] = 1  # 100 pixels
    pred = np.zeros((20, 20), dtype=int)
    pred[0:5, 0:10] = 1   # 50 inside truth
    pred[10:15, 0:5] = 1  # 25 outside truth
    ious, _ = class_iou(pred, truth, 2)
    assert ious[1] == pytest.approx(50 / 125)


def test_class_iou_excludes_absent_classes():
    pred = np.zeros((3, 3), dtype=int)
    truth = np.zeros((3, 3), dtype=int)
    ious, miou = class_iou(pred, truth, 5)
    assert np.isnan(ious[1:]).all() and ious[0] == 1.0 and miou == 1.0


def test_class_iou_shape_mismatch():
    with pytest.raises(ValueError):
        class_iou(np.zeros((2, 2)), np.zeros((3, 3)), 2)


def test_error_rate_endpoints():
    assert error_rate([1, 1], [1, 1]).overall_percent == 0.0
    assert error_rate([1, 1], [0, 0]).overall_percent == 100.0
    preds = [0] * 69 + [1] * 31
    truths = [0] * 100
    assert error_rate(preds, truths).overall_percent == pytest.approx(31.00)


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.sampled_from("abc")),
                min_size=1, max_size=40))
def test_error_rate_weighted_mean_identity(rows):
    preds = [r[0] for r in rows]
    truths = [r[1] for r in rows]
    tags = [r[2] for r in rows]
    report = error_rate(preds, truths, tags)
    weighted = sum(
        report.per_category_percent[t] * report.per_category_count[t] for t in report.per_category_percent
    ) / len(rows)
    assert report.overall_percent == pytest.approx(weighted)


def test_error_rate_length_mismatch():
    with pytest.raises(ValueError):
        error_rate([1], [1, 2])


def test_count_parameters_mask_predictor():
    total, per_child = count_parameters(MaskPredictor(MaskPredictorConfig()))
    assert total == 44_161
    assert per_child["head"] == 17


def test_count_parameters_small_conv():
    conv = nn.Conv2d(8, 3, 1)
    total, _ = count_parameters(conv)
    assert total == 27  # 24 weights + 3 biases


def test_count_parameters_excludes_frozen():
    model = nn.Sequential(nn.Linear(4, 4), nn.Linear(4, 2))
    full, _ = count_parameters(model)
    for p in model[0].parameters():
        p.requires_grad_(False)
    frozen, per_child = count_parameters(model)
    assert full == 30 and frozen == 10
    assert per_child["0"] == 0 and per_child["1"] == 10


def test_feature_fidelity_identity():
    v = np.array([0.5, -2.0, 0.0, 1.0])
    report = feature_fidelity(v, v.copy())
    assert report.jaccard == 1.0 and report.mse == 0.0


def test_feature_fidelity_threshold_above_max():
    a = np.array([0.2, 0.4])
    b = np.array([0.1, 0.3])
    report = feature_fidelity(a, b, threshold=2.0)  # normalized max is 1
    assert report.jaccard == 1.0  # both supports empty
    assert report.mse > 0.0


def test_feature_fidelity_offline_recomputation():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=60), rng.normal(size=60)
    report = feature_fidelity(a, b, threshold=0.05)
    na, nb = a / np.abs(a).max(), b / np.abs(b).max()
    sa = {i for i in range(60) if abs(na[i]) > 0.05}
    sb = {i for i in range(60) if abs(nb[i]) > 0.05}
    assert report.jaccard == pytest.approx(len(sa & sb) / len(sa | sb))
    assert report.mse == pytest.approx(np.mean((na - nb) ** 2))


def test_feature_fidelity_shape_mismatch():
    with pytest.raises(ValueError):
        feature_fidelity(np.zeros(3), np.zeros(4))


def test_normalize_and_support_helpers():
    assert np.allclose(normalize_unit_max(np.array([0.0, -4.0, 2.0])), [0.0, -1.0, 0.5])
    assert normalize_unit_max(np.zeros(3)).tolist() == [0.0, 0.0, 0.0]
    assert support(np.array([0.0, 0.5, -0.9]), 0.4) == {1, 2}
