"""Learnable keep/drop masking of semantic masks.

The mask predictor is a small transposed-convolution decoder over the RGB
semantic mask; its single-channel output is discretized per pixel by a
two-class Gumbel-Softmax over (logit, 0). Hard masks use the straight-through
surrogate: discrete values forward, relaxed gradients backward. The product
of the semantic mask with the binary mask is the transmitted representation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .segmentation import SemanticMask


@dataclass(frozen=True)
class MaskPredictorConfig:
    in_channels: int = 3
    widths: tuple[int, int, int] = (64, 32, 16)
    kernel_size: int = 4
    upsample_per_layer: int = 2
    tau_start: float = 1.0
    tau_end: float = 0.1
    anneal_steps: int = 30
    hard_eval: bool = True
    # Consume the full-resolution mask and resize the output back down
    # (the redundant geometry) instead of the default 1/8 input.
    full_res_input: bool = False
    # "sigmoid" replaces Gumbel sampling with a plain sigmoid + 0.5 threshold.
    discretization: str = "gumbel"
    # Initialize the decoder as a bilinear upsampler with a keep-everything
    # head. From random init the sparsity pressure crystallizes a periodic
    # subsampling lattice (content-independent and ruinous for run-length
    # payloads); from a smooth start it prunes whole semantic regions.
    smooth_init: bool = True
    # Keep/drop decisions are made per block of this many pixels (the decoder
    # features are average-pooled before the single-channel head, and the
    # discretized mask is nearest-expanded back). Pixel-granular decisions
    # (=1) admit a content-independent subsampling lattice that defeats
    # payload compression; block decisions at object scale do not.
    decision_downsample: int = 4
    # Fade the sampling noise to zero during training (see noise_scale_at).
    noise_anneal: bool = True

    def __post_init__(self) -> None:
        if any(w <= 0 for w in self.widths):
            raise ValueError("widths must be positive")
        if self.tau_start <= 0 or self.tau_end <= 0:
            raise ValueError("temperatures must be positive")
        if self.discretization not in ("gumbel", "sigmoid"):
            raise ValueError(f"unknown discretization {self.discretization!r}")
        if self.decision_downsample < 1:
            raise ValueError("decision_downsample must be >= 1")

    def tau_at(self, step: int) -> float:
        """Exponential anneal from tau_start to tau_end over anneal_steps."""
        if self.anneal_steps <= 1:
            return self.tau_end
        t = min(max(step, 0), self.anneal_steps - 1) / (self.anneal_steps - 1)
        return float(self.tau_start * (self.tau_end / self.tau_start) ** t)

    def noise_scale_at(self, step: int) -> float:
        """Gumbel-noise amplitude: 1 early, linearly to 0 by ~70% of the anneal.

        Stochastic keep/drop lets the objective hide behind random
        subsampling (low task loss in expectation with an empty deterministic
        mask); fading the noise makes late training match the deterministic
        masks used for evaluation and transmission.
        """
        if not self.noise_anneal:
            return 1.0
        horizon = max(1, round(0.7 * self.anneal_steps))
        return float(max(0.0, 1.0 - step / horizon))


@dataclass
class BinaryMask:
    values: np.ndarray  # H×W float32; {0,1} in hard mode, [0,1] in soft mode
    mode: str  # "soft" | "hard"

    def __post_init__(self) -> None:
        if self.mode not in ("soft", "hard"):
            raise ValueError(f"bad mode {self.mode!r}")

    @property
    def density(self) -> float:
        return float(np.mean(self.values))


@dataclass
class MaskedMask:
    """The transmitted representation: semantic mask times binary mask."""

    rgb: np.ndarray  # H×W×3 float32 in [0, 1]
    label_map_masked: np.ndarray  # H×W int64; dropped pixels carry dropped_label
    dropped_label: int
    mode: str

    @property
    def rgb01(self) -> np.ndarray:
        return self.rgb

    @property
    def num_labels(self) -> int:
        """Label-space size including the reserved dropped value."""
        return self.dropped_label + 1


def sample_gumbel(shape, generator: torch.Generator | None, dtype=torch.float32, eps: float = 1e-20):
    u = torch.rand(shape, generator=generator, dtype=dtype)
    return -torch.log(-torch.log(u + eps) + eps)


def gumbel_binary_tensor(
    logits: torch.Tensor,
    tau: float,
    hard: bool = False,
    sample: bool = True,
    generator: torch.Generator | None = None,
    noise_scale: float = 1.0,
) -> torch.Tensor:
    """Two-class Gumbel-Softmax over (logit, 0); differentiable in ``logits``.

    Soft mode returns the keep-class probability of the relaxation. Hard mode
    returns {0,1} with the straight-through gradient of the soft relaxation.
    With ``sample=False`` (or a zero ``noise_scale``) the noise is omitted
    and the relaxation reduces to a temperature-scaled sigmoid (hard: a
    0-threshold).
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if sample and noise_scale > 0:
        g_keep = sample_gumbel(logits.shape, generator, dtype=logits.dtype)
        g_drop = sample_gumbel(logits.shape, generator, dtype=logits.dtype)
        soft = torch.sigmoid((logits + noise_scale * (g_keep - g_drop)) / tau)
    else:
        soft = torch.sigmoid(logits / tau)
    if not hard:
        return soft
    hard_vals = (soft > 0.5).to(logits.dtype)
    # Grouping matters: (soft - soft.detach()) is exactly zero elementwise, so
    # the forward value stays binary while gradients follow the relaxation.
    return hard_vals.detach() + (soft - soft.detach())


def gumbel_binary(
    logits: np.ndarray,
    tau: float,
    hard: bool = False,
    seed: int | None = None,
    sample: bool = True,
) -> BinaryMask:
    """Discretize a H×W logit map into a keep/drop mask; deterministic given seed."""
    generator = None
    if sample:
        generator = torch.Generator()
        generator.manual_seed(0 if seed is None else int(seed))
    t = torch.from_numpy(np.asarray(logits, dtype=np.float32))
    with torch.no_grad():
        values = gumbel_binary_tensor(t, tau, hard=hard, sample=sample, generator=generator)
    return BinaryMask(values.numpy(), "hard" if hard else "soft")


class MaskPredictor(nn.Module):
    """Transposed-convolution decoder producing one keep/drop logit per pixel."""

    def __init__(self, config: MaskPredictorConfig):
        super().__init__()
        self.config = config
        k = config.kernel_size
        stride = config.upsample_per_layer
        pad = (k - stride) // 2
        chans = (config.in_channels,) + tuple(config.widths)
        self.deconvs = nn.ModuleList(
            nn.ConvTranspose2d(chans[i], chans[i + 1], k, stride=stride, padding=pad)
            for i in range(len(config.widths))
        )
        self.head = nn.Conv2d(config.widths[-1], 1, 1)
        if config.smooth_init:
            self._smooth_init()

    def _smooth_init(self) -> None:
        k, stride = self.config.kernel_size, self.config.upsample_per_layer
        center = (k - 1) / 2.0 if k % 2 == 1 else k / 2.0 - 0.5
        og = torch.arange(k, dtype=torch.float32)
        line = 1.0 - (og - center).abs() / stride
        kernel = torch.outer(line, line)
        with torch.no_grad():
            for deconv in self.deconvs:
                cin = deconv.weight.shape[0]
                base = kernel / cin
                noise = 0.02 * torch.randn_like(deconv.weight)
                deconv.weight.copy_(base.expand_as(deconv.weight) + noise)
                deconv.bias.zero_()
            self.head.weight.normal_(0.0, 0.1)
            self.head.bias.fill_(1.0)

    def forward(self, mask_rgb: torch.Tensor) -> torch.Tensor:
        """B×3×h×w semantic-mask rendering to per-block keep/drop logits.

        The decoder upsamples by 2 per layer; with block decisions the logit
        grid is that native resolution divided by ``decision_downsample``.
        """
        if mask_rgb.shape[1] != self.config.in_channels:
            raise ValueError(
                f"expected {self.config.in_channels} input channels, got {mask_rgb.shape[1]}"
            )
        x = mask_rgb
        for deconv in self.deconvs:
            x = F.relu(deconv(x))
        block = self.config.decision_downsample
        if block > 1:
            if x.shape[-2] % block or x.shape[-1] % block:
                raise ValueError(
                    f"decoder output {tuple(x.shape[-2:])} not divisible by decision block {block}"
                )
            x = F.avg_pool2d(x, block)
        return self.head(x)


def build_mask_predictor(config: MaskPredictorConfig, seed: int = 0) -> MaskPredictor:
    torch.manual_seed(seed)
    return MaskPredictor(config)


def expand_mask(mask: torch.Tensor, target_hw: tuple[int, int]) -> torch.Tensor:
    """Resize a (soft or hard) mask to the semantic-mask resolution.

    Nearest-neighbor keeps hard masks binary and soft block values intact;
    it is the identity when the sizes already agree.
    """
    if mask.shape[-2:] == tuple(target_hw):
        return mask
    return F.interpolate(mask, size=tuple(target_hw), mode="nearest")


def sample_masks(
    predictor: MaskPredictor,
    inputs: torch.Tensor,
    target_hw: tuple[int, int],
    tau: float,
    hard: bool = False,
    sample: bool = True,
    generator: torch.Generator | None = None,
    noise_scale: float = 1.0,
) -> torch.Tensor:
    """Masks at the semantic-mask resolution: logits, discretize, then resize."""
    logits = predictor(inputs)
    mask = gumbel_binary_tensor(
        logits, tau, hard=hard, sample=sample, generator=generator, noise_scale=noise_scale
    )
    return expand_mask(mask, target_hw)


def predictor_input(mask_rgb01: torch.Tensor, config: MaskPredictorConfig) -> torch.Tensor:
    """What the predictor consumes for a B×3×H×W semantic-mask rendering.

    Default geometry: the rendering average-pooled by the total upsampling
    factor, so the decoder restores full resolution exactly. The full-res
    variant feeds the rendering unchanged and relies on the resize step.
    """
    if config.full_res_input:
        return mask_rgb01
    factor = config.upsample_per_layer ** len(config.widths)
    return F.avg_pool2d(mask_rgb01, kernel_size=factor, stride=factor)


def predict_binary_mask(
    mask_rgb: np.ndarray,
    model: MaskPredictor,
    tau: float,
    seed: int | None = None,
    hard: bool | None = None,
    sample: bool = True,
) -> BinaryMask:
    """Keep/drop mask for one semantic-mask rendering (3×h×w, values in [0, 1])."""
    if mask_rgb.ndim != 3 or mask_rgb.shape[0] != 3:
        raise ValueError(f"expected 3×h×w input, got {mask_rgb.shape}")
    config = model.config
    if hard is None:
        hard = config.hard_eval
    x = torch.from_numpy(np.asarray(mask_rgb, dtype=np.float32))[None]
    factor = config.upsample_per_layer ** len(config.widths)
    target = (x.shape[-2] * factor, x.shape[-1] * factor) if not config.full_res_input else x.shape[-2:]
    model.eval()
    with torch.no_grad():
        if config.discretization == "sigmoid":
            logits = model(x)
            soft = torch.sigmoid(logits / tau)
            mask = (soft > 0.5).to(soft.dtype) if hard else soft
        else:
            generator = None
            if sample:
                generator = torch.Generator()
                generator.manual_seed(0 if seed is None else int(seed))
            logits = model(x)
            mask = gumbel_binary_tensor(logits, tau, hard=hard, sample=sample, generator=generator)
        mask = expand_mask(mask, tuple(target))[0, 0]
    return BinaryMask(mask.numpy(), "hard" if hard else "soft")


def apply_mask(mask: SemanticMask | MaskedMask, binary: BinaryMask) -> MaskedMask:
    """Element-wise product of a semantic mask with a keep/drop mask.

    Hard-dropped pixels are assigned the reserved dropped label so the result
    stays losslessly codable. Re-applying the same hard mask is the identity.
    """
    if isinstance(mask, MaskedMask):
        rgb01, base_labels = mask.rgb01, mask.label_map_masked
        dropped = mask.dropped_label
    else:
        rgb01, base_labels = mask.rgb01, mask.label_map
        dropped = mask.dropped_label
    values = np.asarray(binary.values, dtype=np.float32)
    if values.shape != rgb01.shape[:2]:
        raise ValueError(f"mask shape {values.shape} != image shape {rgb01.shape[:2]}")
    rgb = rgb01 * values[..., None]
    labels = np.where(values == 0.0, dropped, base_labels).astype(np.int64)
    return MaskedMask(rgb=rgb, label_map_masked=labels, dropped_label=dropped, mode=binary.mode)
