"""End-to-end glue: evaluating joint runs, payload accounting, fidelity taps.

Everything here works on held-out scene indices of a corpus, mirroring how
the transmitted artifact would be produced: semantic mask, keep/drop mask,
masked product, run-length payload.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .codec import payload_bits_label_map, payload_bits_raw_image
from .downstream import DamageClassifier, QuestionTokenVocab, VQAHead, pad_token_batch
from .masking import apply_mask, BinaryMask
from .metrics import FidelityReport, feature_fidelity
from .palettes import ClassPalette
from .scenes import Sample
from .segmentation import SemanticMask, mask_from_labels
from .training import JointResult, hard_masks_for_scenes


@dataclass
class JointEvaluation:
    accuracy: float
    mask_density: float
    payload_masked_bits: list[int]
    payload_unmasked_bits: list[int]

    @property
    def mean_payload_masked(self) -> float:
        return float(np.mean(self.payload_masked_bits))

    @property
    def mean_payload_unmasked(self) -> float:
        return float(np.mean(self.payload_unmasked_bits))


def evaluate_joint(
    result: JointResult,
    samples: list[Sample],
    scene_indices,
    palette: ClassPalette,
    task: str = "classification",
    token_vocab: QuestionTokenVocab | None = None,
    batch_size: int = 16,
) -> JointEvaluation:
    """Accuracy, hard-mask density, and per-scene payloads on held-out scenes."""
    idx = [int(i) for i in scene_indices]
    masks = hard_masks_for_scenes(result, idx)
    mask_rgb = result.mask_rgb[idx]
    y = mask_rgb * torch.from_numpy(masks)[:, None]

    head = result.head
    head.eval()
    correct = total = 0
    with torch.no_grad():
        if task == "classification":
            targets = torch.tensor([samples[i].damage.value for i in idx])
            preds = []
            for start in range(0, len(idx), batch_size):
                preds.append(head(y[start : start + batch_size]).argmax(dim=1))
            preds = torch.cat(preds)
            correct = int((preds == targets).sum().item())
            total = len(idx)
        else:
            for row, i in enumerate(idx):
                for qa in samples[i].qa:
                    tokens = pad_token_batch([token_vocab.encode(qa.question_text)])
                    out = head(y[row : row + 1], tokens)
                    correct += int(out.argmax(dim=1).item() == qa.answer_id)
                    total += 1

    dropped = palette.dropped_label
    masked_bits, unmasked_bits = [], []
    for row, i in enumerate(idx):
        labels = result.mask_labels[i]
        masked = np.where(masks[row] == 0, dropped, labels)
        masked_bits.append(payload_bits_label_map(masked, num_labels=dropped + 1))
        unmasked_bits.append(payload_bits_label_map(labels, num_labels=dropped + 1))
    return JointEvaluation(
        accuracy=correct / max(total, 1),
        mask_density=float(masks.mean()),
        payload_masked_bits=masked_bits,
        payload_unmasked_bits=unmasked_bits,
    )


@dataclass
class VariantMetrics:
    name: str
    error_percent: float
    mean_payload_bits: float


def input_variants(
    sample: Sample,
    predicted: SemanticMask,
    binary: BinaryMask,
    palette: ClassPalette,
) -> dict[str, tuple[np.ndarray, int]]:
    """The four comparison inputs with their transmitted payload sizes in bits."""
    gt = mask_from_labels(sample.label_map, palette)
    masked = apply_mask(predicted, binary)
    K1 = palette.dropped_label + 1
    return {
        "original_image": (sample.image, payload_bits_raw_image(*sample.image.shape[:2])),
        "ground_truth_mask": (gt.rgb01, payload_bits_label_map(gt.label_map, num_labels=K1)),
        "predicted_mask": (predicted.rgb01, payload_bits_label_map(predicted.label_map, num_labels=K1)),
        "masked_mask": (masked.rgb01, payload_bits_label_map(masked.label_map_masked, num_labels=K1)),
    }


def fidelity_for_pair(
    head: DamageClassifier | VQAHead,
    reference_rgb01: np.ndarray,
    masked_rgb01: np.ndarray,
    threshold: float = 0.01,
    category: str = "overall",
) -> FidelityReport:
    """Feature fidelity between the semantic mask and its masked product.

    Tap points: the classifier taps the feature map after its initial
    convolution block; the VQA head taps the last layer of its visual
    encoder.
    """
    head.eval()
    with torch.no_grad():
        a = _tap(head, reference_rgb01)
        b = _tap(head, masked_rgb01)
    return feature_fidelity(a, b, threshold=threshold, category=category)


def _tap(head, rgb01: np.ndarray) -> np.ndarray:
    x = torch.from_numpy(np.ascontiguousarray(rgb01.transpose(2, 0, 1)))[None].float()
    if isinstance(head, VQAHead):
        return head.visual_features(x)[0].numpy()
    return head.stem_features(x)[0].numpy().reshape(-1)
