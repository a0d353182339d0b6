"""Evaluation metrics: error rates, IoU, feature fidelity, parameter counts."""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np


def jaccard(a: Iterable, b: Iterable) -> float:
    """|A ∩ B| / |A ∪ B|; two empty sets agree perfectly and score 1."""
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


@dataclass(frozen=True)
class FidelityReport:
    jaccard: float
    mse: float
    category: str = "overall"

    def __post_init__(self) -> None:
        if not 0.0 <= self.jaccard <= 1.0:
            raise ValueError("jaccard out of [0, 1]")
        if self.mse < 0:
            raise ValueError("mse negative")


def normalize_unit_max(v: np.ndarray) -> np.ndarray:
    """Scale a vector so its largest magnitude is 1 (zero vectors pass through)."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    peak = np.abs(v).max(initial=0.0)
    return v if peak == 0 else v / peak


def support(v: np.ndarray, threshold: float) -> set[int]:
    return set(np.flatnonzero(np.abs(v) > threshold).tolist())


def feature_fidelity(
    features_reference: np.ndarray,
    features_masked: np.ndarray,
    threshold: float = 0.01,
    category: str = "overall",
) -> FidelityReport:
    """Fidelity between two feature vectors from the same tap point.

    Both vectors are normalized to unit max; the Jaccard index compares
    their supra-threshold supports and the MSE compares the normalized
    values directly. The threshold is relative to each vector's own peak.
    """
    a = normalize_unit_max(features_reference)
    b = normalize_unit_max(features_masked)
    if a.shape != b.shape:
        raise ValueError(f"feature shapes differ: {a.shape} vs {b.shape}")
    jac = jaccard(support(a, threshold), support(b, threshold))
    mse = float(np.mean((a - b) ** 2)) if a.size else 0.0
    return FidelityReport(jaccard=jac, mse=mse, category=category)


def class_iou(
    pred: np.ndarray, truth: np.ndarray, num_classes: int
) -> tuple[np.ndarray, float]:
    """Per-class IoU and its mean over classes present in prediction or truth.

    Classes absent from both are excluded from the mean (their IoU is NaN).
    Accepts single maps or batches; counts pool over everything given.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    ious = np.full(num_classes, np.nan)
    for k in range(num_classes):
        p = pred == k
        t = truth == k
        union = np.logical_or(p, t).sum()
        if union == 0:
            continue
        ious[k] = np.logical_and(p, t).sum() / union
    present = ~np.isnan(ious)
    miou = float(ious[present].mean()) if present.any() else float("nan")
    return ious, miou


@dataclass(frozen=True)
class ErrorRateReport:
    overall_percent: float
    per_category_percent: dict[str, float]
    per_category_count: dict[str, int]


def error_rate(
    predictions: Sequence,
    ground_truths: Sequence,
    category_tags: Sequence[str] | None = None,
) -> ErrorRateReport:
    """100 x (1 - accuracy), overall and per category tag."""
    if len(predictions) != len(ground_truths):
        raise ValueError("predictions and ground truths differ in length")
    if category_tags is not None and len(category_tags) != len(predictions):
        raise ValueError("category tags differ in length")
    n = len(predictions)
    wrong = [p != t for p, t in zip(predictions, ground_truths)]
    overall = 100.0 * sum(wrong) / n if n else 0.0
    per_cat: dict[str, float] = {}
    counts: dict[str, int] = {}
    if category_tags is not None:
        for tag in sorted(set(category_tags)):
            idx = [i for i, t in enumerate(category_tags) if t == tag]
            counts[tag] = len(idx)
            per_cat[tag] = 100.0 * sum(wrong[i] for i in idx) / len(idx)
    return ErrorRateReport(overall, per_cat, counts)


def count_parameters(model) -> tuple[int, dict[str, int]]:
    """Trainable-scalar count of a torch module, total and per direct child."""
    total = sum(p.numel() for p in model.parameters() if p.requires_grad)
    per_child = {
        name: sum(p.numel() for p in child.parameters() if p.requires_grad)
        for name, child in model.named_children()
    }
    return total, per_child
