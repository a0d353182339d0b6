"""Losses and training loops: separate segmentation training, then joint
training of the mask predictor with a downstream head.

The joint loop optimizes a weighted sum of the mask sparsity loss and the
downstream cross-entropy through soft Gumbel masks with an annealed
temperature; validation always uses hard masks. Runs are deterministic
given a seed, and masked/unmasked runs with the same seed share the head
initialization, batch order, and dropout stream so they differ only in the
masking path.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .corpus import CorpusSplit
from .downstream import (
    ClassifierConfig,
    DamageClassifier,
    QuestionTokenVocab,
    VQAConfig,
    VQAHead,
)
from .masking import MaskPredictor, MaskPredictorConfig, predictor_input, sample_masks
from .metrics import class_iou
from .oracles import AnswerVocabulary
from .palettes import ClassPalette
from .scenes import Sample
from .segmentation import SegConfig, SegmentationNet


class TrainingDiverged(RuntimeError):
    """Raised when a loss becomes non-finite; message carries the step diagnostics."""


@dataclass(frozen=True)
class LossWeights:
    sparsity: float = 1.0
    categorical: float = 1.0

    def __post_init__(self) -> None:
        if self.sparsity < 0 or self.categorical < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.sparsity == 0 and self.categorical == 0:
            raise ValueError("at least one loss weight must be positive")


def sparsity_loss(mask_values) -> float:
    """Mean absolute deviation of the mask from the all-zeros target."""
    values = np.asarray(getattr(mask_values, "values", mask_values), dtype=np.float64)
    return float(np.abs(values).mean())


def categorical_ce(pred, true_class, eps: float = 1e-12) -> float:
    """Cross-entropy of predicted distribution(s) against integer class labels.

    Probabilities are clamped to [eps, 1] before the log; batched inputs
    average over samples.
    """
    pred = np.asarray(pred, dtype=np.float64)
    if pred.ndim == 1:
        pred = pred[None]
        true = np.asarray([true_class])
    else:
        true = np.asarray(true_class)
    if np.any(pred < -1e-9) or np.any(np.abs(pred.sum(axis=1) - 1.0) > 1e-5):
        raise ValueError("predictions are not valid probability distributions")
    picked = pred[np.arange(len(true)), true]
    return float(-np.log(np.clip(picked, eps, 1.0)).mean())


def total_loss(l_sparsity: float, l_categorical: float, weights: LossWeights) -> float:
    """Weighted sum of the sparsity and task losses."""
    return weights.sparsity * l_sparsity + weights.categorical * l_categorical


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-3
    early_stop_patience: int | None = None
    stop_at_metric: float | None = None  # stop once the epoch metric reaches this
    # Ramp the sparsity weight in linearly over this many epochs. Pruning an
    # untrained head collapses the mask to all-dropped before the task loss
    # can defend useful pixels; the ramp lets the head learn first.
    sparsity_warmup_epochs: int = 0
    # Mask-predictor learning-rate multiplier. The straight-through surrogate
    # amplifies gradients as the temperature anneals; a slower predictor
    # damps keep/drop oscillation while the head tracks.
    predictor_lr_scale: float = 0.2

    def sparsity_scale(self, epoch: int) -> float:
        if self.sparsity_warmup_epochs <= 0:
            return 1.0
        return min(1.0, epoch / self.sparsity_warmup_epochs)


def write_history_csv(history: list[dict], path: str | Path) -> None:
    if not history:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(history[0].keys()))
        writer.writeheader()
        writer.writerows(history)


def _stack_images(samples: list[Sample]) -> torch.Tensor:
    arr = np.stack([s.image.transpose(2, 0, 1) for s in samples])
    return torch.from_numpy(np.ascontiguousarray(arr)).float()


def _stack_labels(samples: list[Sample]) -> torch.Tensor:
    return torch.from_numpy(np.stack([s.label_map for s in samples])).long()


def _check_finite(loss: torch.Tensor, epoch: int, step: int) -> None:
    if not torch.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss.item()} at epoch {epoch} step {step}")


def train_segmentation(
    samples: list[Sample],
    split: CorpusSplit,
    palette: ClassPalette,
    config: SegConfig,
    schedule: TrainSchedule,
    seed: int = 0,
) -> tuple[SegmentationNet, list[dict]]:
    """Per-pixel cross-entropy training; history records loss and mIoU per epoch."""
    if not split.train:
        raise ValueError("empty training split")
    torch.manual_seed(seed)
    model = SegmentationNet(config)
    opt = torch.optim.Adam(model.parameters(), lr=schedule.lr)
    g = torch.Generator().manual_seed(seed)

    images = _stack_images(samples)
    labels = _stack_labels(samples)
    train_idx = torch.tensor(split.train)
    eval_idx = torch.tensor(split.val if split.val else split.train)

    history: list[dict] = []
    best_metric, best_state, patience_left = -1.0, None, schedule.early_stop_patience
    for epoch in range(schedule.epochs):
        model.train()
        order = train_idx[torch.randperm(len(train_idx), generator=g)]
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, len(order), schedule.batch_size):
            idx = order[start : start + schedule.batch_size]
            opt.zero_grad()
            logits = model(images[idx])
            loss = F.cross_entropy(logits, labels[idx])
            _check_finite(loss, epoch, n_batches)
            loss.backward()
            opt.step()
            epoch_loss += loss.item()
            n_batches += 1

        miou = evaluate_segmentation(model, images[eval_idx], labels[eval_idx], config.num_classes)
        history.append({"epoch": epoch, "loss": epoch_loss / max(n_batches, 1), "val_miou": miou})
        if miou > best_metric:
            best_metric = miou
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
            patience_left = schedule.early_stop_patience
        elif patience_left is not None:
            patience_left -= 1
            if patience_left <= 0:
                break
        if schedule.stop_at_metric is not None and miou >= schedule.stop_at_metric:
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    return model, history


def evaluate_segmentation(
    model: SegmentationNet, images: torch.Tensor, labels: torch.Tensor, num_classes: int,
    batch_size: int = 16,
) -> float:
    model.eval()
    preds = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            preds.append(model(images[start : start + batch_size]).argmax(dim=1))
    _, miou = class_iou(torch.cat(preds).numpy(), labels.numpy(), num_classes)
    return miou


def precompute_semantic_rgb(
    seg_model: SegmentationNet | None,
    samples: list[Sample],
    palette: ClassPalette,
    batch_size: int = 16,
) -> tuple[torch.Tensor, np.ndarray]:
    """Semantic-mask renderings (N×3×H×W in [0,1]) and their label maps.

    With no segmentation model the ground-truth maps are used, which isolates
    mask-predictor training from segmentation quality.
    """
    color_lut = torch.from_numpy(palette.color_array()).float() / 255.0
    if seg_model is None:
        label_maps = np.stack([s.label_map for s in samples])
    else:
        seg_model.eval()
        images = _stack_images(samples)
        outs = []
        with torch.no_grad():
            for start in range(0, len(images), batch_size):
                outs.append(seg_model(images[start : start + batch_size]).argmax(dim=1))
        label_maps = torch.cat(outs).numpy()
    rgb = color_lut[torch.from_numpy(label_maps).long()]  # N×H×W×3
    return rgb.permute(0, 3, 1, 2).contiguous(), label_maps


@dataclass
class JointResult:
    predictor: MaskPredictor | None
    head: nn.Module
    history: list[dict]
    mask_rgb: torch.Tensor  # semantic renderings the run consumed
    mask_labels: np.ndarray


def _hard_masks(
    predictor: MaskPredictor | None,
    pred_inputs: torch.Tensor,
    target_hw: tuple[int, int],
    tau: float,
) -> torch.Tensor:
    """Deterministic hard {0,1} masks for evaluation and transmission.

    Uses the mode of the relaxation (noise-free threshold) rather than a
    Gumbel draw: sampling would sprinkle isolated keep/drop pixels, which
    both destabilizes the task metric and fragments the run-length payload.
    """
    if predictor is None:
        return torch.ones((pred_inputs.shape[0],) + tuple(target_hw))
    predictor.eval()
    with torch.no_grad():
        return sample_masks(predictor, pred_inputs, target_hw, tau, hard=True, sample=False)[:, 0]


def train_joint(
    samples: list[Sample],
    split: CorpusSplit,
    palette: ClassPalette,
    seg_model: SegmentationNet | None,
    mask_config: MaskPredictorConfig | None,
    head_config: ClassifierConfig | VQAConfig,
    weights: LossWeights,
    schedule: TrainSchedule,
    seed: int = 0,
    task: str = "classification",
    token_vocab: QuestionTokenVocab | None = None,
    vocabulary: AnswerVocabulary | None = None,
) -> JointResult:
    """Jointly train the mask predictor and a downstream head under the
    weighted sparsity + cross-entropy objective.

    ``mask_config=None`` trains the identically-seeded unmasked baseline:
    same head initialization, batch order, and dropout stream, with the
    semantic mask passed through unmasked.
    """
    if not split.train:
        raise ValueError("empty training split")
    if task not in ("classification", "vqa"):
        raise ValueError(f"unknown task {task!r}")
    if task == "vqa" and token_vocab is None:
        raise ValueError("vqa task needs a token vocabulary")

    mask_rgb, mask_labels = precompute_semantic_rgb(seg_model, samples, palette)
    target_hw = tuple(mask_rgb.shape[-2:])

    torch.manual_seed(seed)
    if task == "classification":
        head: nn.Module = DamageClassifier(head_config)
    else:
        head = VQAHead(head_config, token_vocab.size)
    predictor = None
    param_groups = [{"params": list(head.parameters()), "lr": schedule.lr}]
    if mask_config is not None:
        torch.manual_seed(seed + 1)
        predictor = MaskPredictor(mask_config)
        param_groups.append(
            {"params": list(predictor.parameters()),
             "lr": schedule.lr * schedule.predictor_lr_scale}
        )
        pred_inputs = predictor_input(mask_rgb, mask_config)
    else:
        pred_inputs = mask_rgb[:, :0]  # unused placeholder

    # Examples (scene index, target); VQA expands scenes into QA pairs.
    if task == "classification":
        ex_scene = np.arange(len(samples))
        ex_target = np.array([s.damage.value for s in samples])
        ex_tokens = None
    else:
        triples = [
            (i, token_vocab.encode(qa.question_text), qa.answer_id)
            for i in range(len(samples))
            for qa in samples[i].qa
        ]
        ex_scene = np.array([t[0] for t in triples])
        ex_target = np.array([t[2] for t in triples])
        width = max(len(t[1]) for t in triples)
        ex_tokens = torch.zeros(len(triples), width, dtype=torch.long)
        for r, t in enumerate(triples):
            ex_tokens[r, : len(t[1])] = torch.tensor(t[1])

    by_scene = {s: [] for s in range(len(samples))}
    for e, s in enumerate(ex_scene):
        by_scene[int(s)].append(e)
    train_ex = np.array([e for s in split.train for e in by_scene[s]])
    val_scenes = split.val if split.val else split.train
    val_ex = np.array([e for s in val_scenes for e in by_scene[s]])

    opt = torch.optim.Adam(param_groups)
    g_shuffle = torch.Generator().manual_seed(seed)
    g_gumbel = torch.Generator().manual_seed(seed + 7919)
    torch.manual_seed(seed + 2)  # dropout stream, identical across mask/no-mask runs

    targets = torch.from_numpy(ex_target).long()
    history: list[dict] = []
    # Model selection minimizes the weighted objective on validation with
    # deterministic hard masks, so a run that prunes past usefulness still
    # ends at its best sparsity/accuracy compromise.
    best_objective, best_states, patience_left = float("inf"), None, schedule.early_stop_patience
    for epoch in range(schedule.epochs):
        tau = mask_config.tau_at(epoch) if mask_config is not None else 1.0
        w_s = weights.sparsity * schedule.sparsity_scale(epoch)
        head.train()
        if predictor is not None:
            predictor.train()
        order = train_ex[torch.randperm(len(train_ex), generator=g_shuffle).numpy()]
        sums = {"L_s": 0.0, "L_c": 0.0, "total": 0.0}
        n_batches = 0
        for start in range(0, len(order), schedule.batch_size):
            ex = order[start : start + schedule.batch_size]
            scenes = ex_scene[ex]
            opt.zero_grad()
            if predictor is not None:
                # Straight-through: binary masks forward (so the information
                # constraint actually binds; a soft mask is invertible and
                # normalization layers downstream would simply rescale it
                # away), relaxed Gumbel gradients backward.
                masks = sample_masks(predictor, pred_inputs[scenes], target_hw, tau,
                                     hard=True, generator=g_gumbel,
                                     noise_scale=mask_config.noise_scale_at(epoch))
                y = mask_rgb[scenes] * masks
                l_s = masks.abs().mean()
            else:
                y = mask_rgb[scenes]
                l_s = torch.zeros(())
            if task == "classification":
                out = head(y)
            else:
                out = head(y, ex_tokens[ex])
            l_c = F.cross_entropy(out, targets[ex])
            loss = w_s * l_s + weights.categorical * l_c
            _check_finite(loss, epoch, n_batches)
            loss.backward()
            opt.step()
            sums["L_s"] += float(l_s.item())
            sums["L_c"] += float(l_c.item())
            sums["total"] += float(loss.item())
            n_batches += 1

        metric, density, val_ce = _evaluate_joint(
            predictor, head, mask_rgb, pred_inputs, target_hw,
            ex_scene, targets, ex_tokens, val_ex, task,
            tau=(mask_config.tau_end if mask_config is not None else 1.0),
            batch_size=schedule.batch_size,
        )
        history.append(
            {
                "epoch": epoch,
                "L_s": sums["L_s"] / max(n_batches, 1),
                "L_c": sums["L_c"] / max(n_batches, 1),
                "total": sums["total"] / max(n_batches, 1),
                "metric": metric,
                "mask_density": density,
            }
        )
        objective = weights.sparsity * density + weights.categorical * val_ce
        if objective < best_objective:
            best_objective = objective
            best_states = (
                {k: v.clone() for k, v in head.state_dict().items()},
                {k: v.clone() for k, v in predictor.state_dict().items()} if predictor else None,
            )
            patience_left = schedule.early_stop_patience
        elif patience_left is not None:
            patience_left -= 1
            if patience_left <= 0:
                break
        if schedule.stop_at_metric is not None and metric >= schedule.stop_at_metric:
            break
    if best_states is not None:
        head.load_state_dict(best_states[0])
        if predictor is not None and best_states[1] is not None:
            predictor.load_state_dict(best_states[1])
    return JointResult(predictor, head, history, mask_rgb, mask_labels)


def _evaluate_joint(
    predictor, head, mask_rgb, pred_inputs, target_hw,
    ex_scene, targets, ex_tokens, eval_ex, task, tau, batch_size,
) -> tuple[float, float, float]:
    """Accuracy, hard-mask density, and cross-entropy on the given examples."""
    head.eval()
    scenes_unique = np.unique(ex_scene[eval_ex])
    masks = _hard_masks(
        predictor,
        pred_inputs[scenes_unique] if predictor is not None else mask_rgb[scenes_unique, :0],
        target_hw, tau,
    )
    mask_of = {int(s): masks[i] for i, s in enumerate(scenes_unique)}
    density = float(masks.mean().item())
    correct, ce_sum = 0, 0.0
    with torch.no_grad():
        for start in range(0, len(eval_ex), batch_size):
            ex = eval_ex[start : start + batch_size]
            scenes = ex_scene[ex]
            m = torch.stack([mask_of[int(s)] for s in scenes])
            y = mask_rgb[scenes] * m[:, None]
            out = head(y) if task == "classification" else head(y, ex_tokens[ex])
            correct += int((out.argmax(dim=1) == targets[ex]).sum().item())
            ce_sum += float(F.cross_entropy(out, targets[ex], reduction="sum").item())
    n = max(len(eval_ex), 1)
    return correct / n, density, ce_sum / n


def hard_masks_for_scenes(
    result: JointResult, scene_indices, tau: float | None = None
) -> np.ndarray:
    """Deterministic hard {0,1} masks (S×H×W) for scenes of a joint run."""
    mask_rgb = result.mask_rgb
    target_hw = tuple(mask_rgb.shape[-2:])
    idx = np.asarray(scene_indices, dtype=np.int64)
    if result.predictor is None:
        return np.ones((len(idx),) + target_hw, dtype=np.float32)
    if tau is None:
        tau = result.predictor.config.tau_end
    pred_inputs = predictor_input(mask_rgb, result.predictor.config)
    return _hard_masks(result.predictor, pred_inputs[idx], target_hw, tau).numpy()
