"""Ground-station task heads consuming the masked semantic mask.

Both heads run on the receiving side where compute is plentiful; the
desk-scale versions mirror the stage pattern of the full-size backbones at
reduced widths and initialize randomly (no pretrained weights).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .oracles import AnswerVocabulary
from .palettes import ClassPalette


@dataclass(frozen=True)
class ClassifierConfig:
    stem_channels: int = 64
    stage_widths: tuple[int, ...] = (64, 96, 128, 160)
    dropout: float = 0.1
    num_classes: int = 3

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")


@dataclass(frozen=True)
class VQAConfig:
    visual_dim: int = 96
    fusion: str = "product"  # "product" | "concat"
    hidden_dim: int = 96
    token_embed_dim: int = 32
    dropout: float = 0.1
    num_answers: int = 13
    backbone: ClassifierConfig = ClassifierConfig(stem_channels=32, stage_widths=(32, 48, 64, 96))

    def __post_init__(self) -> None:
        if self.fusion not in ("product", "concat"):
            raise ValueError(f"unknown fusion {self.fusion!r}")

    @property
    def fused_dim(self) -> int:
        return self.visual_dim * (2 if self.fusion == "concat" else 1)


class _BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        if stride != 1 or cin != cout:
            self.skip = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False), nn.BatchNorm2d(cout)
            )
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.skip(x))


class VisualBackbone(nn.Module):
    """Stem (conv-BN-ReLU) plus four residual stages and global pooling."""

    def __init__(self, config: ClassifierConfig):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(3, config.stem_channels, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(config.stem_channels),
            nn.ReLU(),
        )
        self.pool_in = nn.MaxPool2d(3, stride=2, padding=1)
        stages = []
        cin = config.stem_channels
        for i, w in enumerate(config.stage_widths):
            stages.append(_BasicBlock(cin, w, stride=1 if i == 0 else 2))
            cin = w
        self.stages = nn.Sequential(*stages)
        self.out_channels = cin

    def stem_features(self, x: torch.Tensor) -> torch.Tensor:
        """Feature maps right after the initial convolution block."""
        return self.stem(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.stages(self.pool_in(self.stem(x)))
        return torch.flatten(F.adaptive_avg_pool2d(feats, 1), 1)


class DamageClassifier(nn.Module):
    def __init__(self, config: ClassifierConfig):
        super().__init__()
        self.config = config
        self.backbone = VisualBackbone(config)
        self.dropout = nn.Dropout(config.dropout)
        self.fc = nn.Linear(self.backbone.out_channels, config.num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc(self.dropout(self.backbone(x)))

    def stem_features(self, x: torch.Tensor) -> torch.Tensor:
        return self.backbone.stem_features(x)


def classify_damage(model: DamageClassifier, rgb01: np.ndarray) -> np.ndarray:
    """Probability vector over damage classes for one H×W×3 input in [0, 1]."""
    model.eval()
    with torch.no_grad():
        logits = model(_to_batch(rgb01))
        return torch.softmax(logits, dim=1)[0].numpy()


@dataclass(frozen=True)
class QuestionTokenVocab:
    """Closed token set built from the question templates; index 0 is padding."""

    tokens: tuple[str, ...]

    @staticmethod
    def from_questions(questions: list[str]) -> "QuestionTokenVocab":
        words = sorted({w for q in questions for w in q.lower().split()})
        return QuestionTokenVocab(("<pad>",) + tuple(words))

    @property
    def size(self) -> int:
        return len(self.tokens)

    def encode(self, question: str) -> list[int]:
        index = {t: i for i, t in enumerate(self.tokens)}
        try:
            return [index[w] for w in question.lower().split()]
        except KeyError as exc:
            raise KeyError(f"question token {exc.args[0]!r} outside template vocabulary") from None


def token_vocab_for_palette(palette: ClassPalette) -> QuestionTokenVocab:
    from .oracles import build_question_templates

    return QuestionTokenVocab.from_questions([t.text for t in build_question_templates(palette)])


class QuestionEncoder(nn.Module):
    """Mean of learned token embeddings, projected to the visual feature size."""

    def __init__(self, vocab_size: int, embed_dim: int, out_dim: int):
        super().__init__()
        self.embed = nn.Embedding(vocab_size, embed_dim, padding_idx=0)
        self.project = nn.Linear(embed_dim, out_dim)

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        """B×L padded token ids (0 = padding) to B×out_dim encodings."""
        mask = (token_ids != 0).float().unsqueeze(-1)
        emb = self.embed(token_ids) * mask
        denom = mask.sum(dim=1).clamp(min=1.0)
        return self.project(emb.sum(dim=1) / denom)


class VQAHead(nn.Module):
    """Late-fusion answer classifier over (masked mask, question) pairs."""

    def __init__(self, config: VQAConfig, token_vocab_size: int):
        super().__init__()
        self.config = config
        self.backbone = VisualBackbone(config.backbone)
        self.visual_fc1 = nn.Linear(self.backbone.out_channels, config.visual_dim)
        self.visual_dropout = nn.Dropout(config.dropout)
        self.visual_fc2 = nn.Linear(config.visual_dim, config.visual_dim)
        self.question = QuestionEncoder(token_vocab_size, config.token_embed_dim, config.visual_dim)
        self.answer = nn.Sequential(
            nn.Linear(config.fused_dim, config.hidden_dim),
            nn.ReLU(),
            nn.Dropout(config.dropout),
            nn.Linear(config.hidden_dim, config.num_answers),
        )

    def visual_features(self, x: torch.Tensor) -> torch.Tensor:
        """Last layer of the visual encoder (the fidelity tap point)."""
        v = self.visual_fc1(self.backbone(x))
        v = self.visual_dropout(F.relu(v))
        return self.visual_fc2(v)

    def forward(self, images: torch.Tensor, token_ids: torch.Tensor) -> torch.Tensor:
        v = self.visual_features(images)
        q = self.question(token_ids)
        if self.config.fusion == "product":
            fused = v * q
        else:
            fused = torch.cat([v, q], dim=1)
        return self.answer(fused)


def build_classifier(config: ClassifierConfig, seed: int = 0) -> DamageClassifier:
    torch.manual_seed(seed)
    return DamageClassifier(config)


def build_vqa(config: VQAConfig, token_vocab_size: int, seed: int = 0) -> VQAHead:
    torch.manual_seed(seed)
    return VQAHead(config, token_vocab_size)


def pad_token_batch(token_lists: list[list[int]]) -> torch.Tensor:
    width = max(len(t) for t in token_lists)
    out = torch.zeros(len(token_lists), width, dtype=torch.long)
    for i, toks in enumerate(token_lists):
        out[i, : len(toks)] = torch.tensor(toks, dtype=torch.long)
    return out


def encode_question(
    model: VQAHead, question: str, token_vocab: QuestionTokenVocab
) -> np.ndarray:
    """Deterministic question encoding with the head's learned embeddings."""
    model.eval()
    with torch.no_grad():
        ids = pad_token_batch([token_vocab.encode(question)])
        return model.question(ids)[0].numpy()


def answer_question(
    model: VQAHead,
    rgb01: np.ndarray,
    question: str,
    token_vocab: QuestionTokenVocab,
    vocabulary: AnswerVocabulary | None = None,
) -> int:
    """Arg-max answer index for one (image, question) pair."""
    model.eval()
    with torch.no_grad():
        logits = model(_to_batch(rgb01), pad_token_batch([token_vocab.encode(question)]))
    answer_id = int(logits.argmax(dim=1).item())
    if vocabulary is not None and answer_id >= vocabulary.size:
        raise ValueError("answer index outside vocabulary")
    return answer_id


def _to_batch(image: np.ndarray) -> torch.Tensor:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected H×W×3 image, got {image.shape}")
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))[None].float()
