"""Pyramid-pooling semantic segmentation at 1/8 feature resolution.

A small residual backbone stands in for the full pretrained network the
approach assumes; widths are configurable so a heavyweight backbone can be
slotted in. The pyramid module average-pools the 1/8 features at several
bin sizes, reduces each with a 1x1 convolution, upsamples bilinearly, and
concatenates with the backbone features before the classification head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .palettes import ClassPalette


@dataclass(frozen=True)
class SegConfig:
    num_classes: int = 10
    backbone_widths: tuple[int, int, int] = (16, 32, 64)
    blocks_per_stage: int = 1
    pool_bins: tuple[int, ...] = (1, 2, 3, 6)
    reduction_channels: int | None = None  # default: widths[-1] // len(bins)
    head_channels: int = 32

    @property
    def feature_channels(self) -> int:
        return self.backbone_widths[-1]

    @property
    def reduced(self) -> int:
        if self.reduction_channels is not None:
            return self.reduction_channels
        return max(1, self.feature_channels // len(self.pool_bins))


@dataclass
class SemanticMask:
    """Predicted per-pixel class assignment with its palette rendering."""

    logits: np.ndarray  # K×H×W float32
    label_map: np.ndarray  # H×W int64, argmax of logits
    rgb: np.ndarray  # H×W×3 uint8

    @property
    def num_classes(self) -> int:
        return self.logits.shape[0]

    @property
    def dropped_label(self) -> int:
        return self.num_classes

    @property
    def rgb01(self) -> np.ndarray:
        return self.rgb.astype(np.float32) / np.float32(255.0)


def _norm(channels: int) -> nn.Module:
    groups = 4
    while channels % groups != 0:
        groups -= 1
    return nn.GroupNorm(groups, channels)


class ResidualBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.n1 = _norm(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.n2 = _norm(cout)
        if stride != 1 or cin != cout:
            self.skip = nn.Sequential(nn.Conv2d(cin, cout, 1, stride=stride, bias=False), _norm(cout))
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        out = F.relu(self.n1(self.conv1(x)))
        out = self.n2(self.conv2(out))
        return F.relu(out + self.skip(x))


class Backbone(nn.Module):
    """Stride-8 feature extractor: stem plus two down-sampling stages."""

    def __init__(self, config: SegConfig):
        super().__init__()
        w0, w1, w2 = config.backbone_widths
        self.stem = nn.Sequential(
            nn.Conv2d(3, w0, 3, stride=2, padding=1, bias=False), _norm(w0), nn.ReLU()
        )
        self.stage1 = self._stage(w0, w1, config.blocks_per_stage)
        self.stage2 = self._stage(w1, w2, config.blocks_per_stage)

    @staticmethod
    def _stage(cin: int, cout: int, blocks: int) -> nn.Sequential:
        layers = [ResidualBlock(cin, cout, stride=2)]
        layers += [ResidualBlock(cout, cout) for _ in range(blocks - 1)]
        return nn.Sequential(*layers)

    def forward(self, x):
        return self.stage2(self.stage1(self.stem(x)))


class PyramidPooling(nn.Module):
    """Multi-bin adaptive average pooling with 1x1 reduction and upsampling."""

    def __init__(self, channels: int, bins: tuple[int, ...], reduced: int):
        super().__init__()
        if not bins:
            raise ValueError("need at least one pooling bin")
        self.bins = bins
        self.reducers = nn.ModuleList(nn.Conv2d(channels, reduced, 1) for _ in bins)
        self.out_channels = channels + reduced * len(bins)

    def forward(self, features):
        if features.shape[-1] == 0 or features.shape[-2] == 0:
            raise ValueError("empty feature map")
        size = features.shape[-2:]
        branches = [features]
        for bin_size, reduce in zip(self.bins, self.reducers):
            pooled = F.adaptive_avg_pool2d(features, bin_size)
            reduced = reduce(pooled)
            branches.append(F.interpolate(reduced, size=size, mode="bilinear", align_corners=False))
        return torch.cat(branches, dim=1)


class SegmentationNet(nn.Module):
    def __init__(self, config: SegConfig):
        super().__init__()
        self.config = config
        self.backbone = Backbone(config)
        self.pyramid = PyramidPooling(config.feature_channels, config.pool_bins, config.reduced)
        self.head = nn.Sequential(
            nn.Conv2d(self.pyramid.out_channels, config.head_channels, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(config.head_channels, config.num_classes, 1),
        )

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Backbone features at exactly 1/8 of the input resolution."""
        _check_divisible(x)
        return self.backbone(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Class logits at full input resolution (bilinear 8x upsample)."""
        feats = self.features(x)
        scores = self.head(self.pyramid(feats))
        return F.interpolate(scores, size=x.shape[-2:], mode="bilinear", align_corners=False)


def _check_divisible(x: torch.Tensor) -> None:
    h, w = x.shape[-2:]
    if h % 8 != 0 or w % 8 != 0:
        raise ValueError(f"input size {h}x{w} not divisible by 8")


def build_segmentation(config: SegConfig, seed: int = 0) -> SegmentationNet:
    """Construct with reproducible initialization."""
    torch.manual_seed(seed)
    return SegmentationNet(config)


def _to_batch(image: np.ndarray) -> torch.Tensor:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected H×W×3 image, got {image.shape}")
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))[None].float()


def extract_features(model: SegmentationNet, image: np.ndarray) -> np.ndarray:
    """C×(H/8)×(W/8) backbone features for one H×W×3 image in [0, 1]."""
    model.eval()
    with torch.no_grad():
        return model.features(_to_batch(image))[0].numpy()


def predict_mask(model: SegmentationNet, image: np.ndarray, palette: ClassPalette) -> SemanticMask:
    """Full-resolution semantic mask for one image."""
    model.eval()
    with torch.no_grad():
        logits = model(_to_batch(image))[0].numpy()
    label_map = logits.argmax(axis=0).astype(np.int64)
    return SemanticMask(logits=logits, label_map=label_map, rgb=palette.render(label_map))


def mask_from_labels(label_map: np.ndarray, palette: ClassPalette) -> SemanticMask:
    """Wrap a ground-truth label map in the same container as predictions."""
    label_map = np.asarray(label_map, dtype=np.int64)
    K = palette.num_classes
    logits = np.zeros((K,) + label_map.shape, dtype=np.float32)
    np.put_along_axis(logits, label_map[None], 1.0, axis=0)
    return SemanticMask(logits=logits, label_map=label_map, rgb=palette.render(label_map))
