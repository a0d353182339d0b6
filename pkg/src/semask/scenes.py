"""Deterministic synthetic aerial scenes with oracle labels and answers.

A scene is a stack of axis-aligned rectangles and ellipses painted over a
background class; the label map, damage class, and question answers all
derive from that geometry, so every generated sample carries recomputable
ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .oracles import (
    AnswerVocabulary,
    DamageClass,
    DamageThresholds,
    answer_oracle,
    build_question_templates,
    damage_oracle,
    default_answer_vocabulary,
)
from .palettes import ClassKind, ClassPalette, get_palette


class QA(NamedTuple):
    question_id: int
    question_text: str
    answer_id: int


@dataclass
class Sample:
    """One scene: image, per-pixel labels, damage extent, question-answer pairs."""

    image: np.ndarray  # H×W×3 float32 in [0, 1]
    label_map: np.ndarray  # H×W int64, values < K
    damage: DamageClass
    qa: list[QA]

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]


@dataclass(frozen=True)
class SceneConfig:
    height: int = 96
    width: int = 96
    palette_preset: str = "rescuenet"
    noise_std: float = 0.02
    # inclusive (lo, hi) object counts per kind; kinds absent from the
    # palette are skipped
    building_count: tuple[int, int] = (1, 4)
    road_count: tuple[int, int] = (0, 2)
    water_count: tuple[int, int] = (0, 2)
    tree_count: tuple[int, int] = (0, 5)
    vehicle_count: tuple[int, int] = (0, 3)
    pool_count: tuple[int, int] = (0, 2)
    grass_count: tuple[int, int] = (0, 3)
    debris_count: tuple[int, int] = (0, 2)
    # inclusive size ranges, pixels
    building_size: tuple[int, int] = (18, 36)
    road_width: tuple[int, int] = (10, 16)
    water_radius: tuple[int, int] = (12, 26)
    tree_radius: tuple[int, int] = (7, 14)
    vehicle_size: tuple[int, int] = (10, 16)
    pool_radius: tuple[int, int] = (6, 10)
    grass_radius: tuple[int, int] = (10, 22)
    debris_radius: tuple[int, int] = (10, 22)
    qa_per_scene: int = 4
    question_kinds: tuple[str, ...] = ("count", "presence", "condition")
    max_count_answer: int = 8
    damage_thresholds: DamageThresholds = field(default_factory=DamageThresholds)

    def palette(self) -> ClassPalette:
        return get_palette(self.palette_preset)

    def vocabulary(self) -> AnswerVocabulary:
        return default_answer_vocabulary(self.max_count_answer)


@dataclass(frozen=True)
class PlacedShape:
    """One painted region; later shapes overpaint earlier ones."""

    form: str  # "rect" | "ellipse"
    class_index: int
    cy: float
    cx: float
    half_h: float
    half_w: float

    def contains(self, y, x):
        if self.form == "rect":
            return (np.abs(y - self.cy) <= self.half_h) & (np.abs(x - self.cx) <= self.half_w)
        return ((y - self.cy) / self.half_h) ** 2 + ((x - self.cx) / self.half_w) ** 2 <= 1.0


def _count(rng: np.random.Generator, bounds: tuple[int, int]) -> int:
    lo, hi = bounds
    if hi < lo:
        raise ValueError(f"bad count range {bounds}")
    return int(rng.integers(lo, hi + 1))


def _center(rng: np.random.Generator, extent: int, half: float) -> float:
    lo, hi = half, extent - 1 - half
    if hi <= lo:
        return (extent - 1) / 2.0
    return float(rng.uniform(lo, hi))


def _pick(rng: np.random.Generator, items: list[int]) -> int:
    return items[int(rng.integers(0, len(items)))]


def place_shapes(seed: int, config: SceneConfig, palette: ClassPalette) -> list[PlacedShape]:
    """Sample the scene geometry. Pure function of (seed, config, palette)."""
    rng = np.random.default_rng(seed)
    H, W = config.height, config.width
    shapes: list[PlacedShape] = []

    def ellipse(class_index: int, radius: tuple[int, int]) -> PlacedShape:
        ry = float(rng.uniform(radius[0], radius[1]))
        rx = float(rng.uniform(radius[0], radius[1]))
        return PlacedShape("ellipse", class_index, _center(rng, H, ry), _center(rng, W, rx), ry, rx)

    def rect(class_index: int, size: tuple[int, int], aspect: float = 1.0) -> PlacedShape:
        hh = float(rng.uniform(size[0], size[1])) / 2.0
        hw = float(rng.uniform(size[0], size[1])) / 2.0 * aspect
        return PlacedShape("rect", class_index, _center(rng, H, hh), _center(rng, W, hw), hh, hw)

    water_idx = palette.indices_of_kind(ClassKind.WATER)
    grass_idx = palette.indices_of_kind(ClassKind.GRASS)
    pool_idx = palette.indices_of_kind(ClassKind.POOL)
    tree_idx = palette.indices_of_kind(ClassKind.TREE)
    vehicle_idx = palette.indices_of_kind(ClassKind.VEHICLE)
    debris_idx = palette.indices_of_kind(ClassKind.DEBRIS)
    road_clear = palette.indices_of_kind(ClassKind.ROAD_CLEAR)
    road_flooded = palette.indices_of_kind(ClassKind.ROAD_FLOODED)
    damage_states = {
        "ok": palette.indices_of_kind(ClassKind.BUILDING_OK),
        "minor": palette.indices_of_kind(ClassKind.BUILDING_MINOR),
        "major": palette.indices_of_kind(ClassKind.BUILDING_MAJOR),
        "destroyed": palette.indices_of_kind(ClassKind.BUILDING_DESTROYED),
    }
    flood_states = {
        "dry": palette.indices_of_kind(ClassKind.BUILDING_DRY),
        "flooded": palette.indices_of_kind(ClassKind.BUILDING_FLOODED),
    }
    has_damage = any(damage_states[k] for k in ("minor", "major", "destroyed"))
    has_flood = bool(flood_states["flooded"]) or bool(road_flooded)

    # Scenario draws steer class balance; the oracles remain the ground truth.
    damage_target = ("superficial", "medium", "major")[int(rng.integers(0, 3))]
    flood_target = ("dry", "mixed", "flooded")[int(rng.integers(0, 3))]

    if water_idx:
        n = _count(rng, config.water_count)
        if has_flood and flood_target == "flooded":
            n = max(n, 1)
        elif has_flood and flood_target == "dry":
            n = 0
        for _ in range(n):
            shapes.append(ellipse(water_idx[0], config.water_radius))
    if grass_idx:
        n = _count(rng, config.grass_count)
        if has_flood and flood_target == "dry":
            n = max(n, 1)
        for _ in range(n):
            shapes.append(ellipse(grass_idx[0], config.grass_radius))

    road_indices = road_clear + road_flooded
    if road_indices:
        for _ in range(_count(rng, config.road_count)):
            if road_flooded and road_clear:
                if flood_target == "flooded":
                    cls = road_flooded[0]
                elif flood_target == "dry":
                    cls = road_clear[0]
                else:
                    cls = _pick(rng, [road_clear[0], road_flooded[0]])
            else:
                cls = road_indices[0]
            half = float(rng.uniform(*config.road_width)) / 2.0
            if rng.integers(0, 2) == 0:  # horizontal strip
                shapes.append(PlacedShape("rect", cls, _center(rng, H, half), (W - 1) / 2.0, half, W))
            else:
                shapes.append(PlacedShape("rect", cls, (H - 1) / 2.0, _center(rng, W, half), H, half))

    if debris_idx:
        n = _count(rng, config.debris_count)
        if has_damage and damage_target == "superficial":
            n = 0
        for _ in range(n):
            shapes.append(ellipse(debris_idx[0], config.debris_radius))

    n_buildings = _count(rng, config.building_count)
    for b in range(n_buildings):
        if has_damage:
            if damage_target == "superficial":
                state = "ok"
            elif damage_target == "medium":
                state = ("minor", "major", "ok")[int(rng.integers(0, 3))] if b > 0 else ("minor", "major")[int(rng.integers(0, 2))]
            else:
                state = "destroyed" if b == 0 else ("ok", "minor", "major", "destroyed")[int(rng.integers(0, 4))]
            candidates = damage_states[state] or damage_states["ok"]
        elif flood_states["dry"] or flood_states["flooded"]:
            if flood_target == "flooded":
                state = "flooded"
            elif flood_target == "dry":
                state = "dry"
            else:
                state = ("dry", "flooded")[int(rng.integers(0, 2))]
            candidates = flood_states[state] or flood_states["dry"] or flood_states["flooded"]
        else:
            candidates = palette.indices_of_kind(ClassKind.BUILDING_OK)
        if candidates:
            shapes.append(rect(candidates[0], config.building_size))

    if tree_idx:
        for _ in range(_count(rng, config.tree_count)):
            shapes.append(ellipse(tree_idx[0], config.tree_radius))
    if pool_idx:
        for _ in range(_count(rng, config.pool_count)):
            shapes.append(ellipse(pool_idx[0], config.pool_radius))
    if vehicle_idx:
        for _ in range(_count(rng, config.vehicle_count)):
            shapes.append(rect(vehicle_idx[0], config.vehicle_size, aspect=0.6))
    return shapes


def rasterize_shapes(
    shapes: list[PlacedShape], height: int, width: int, background: int = 0
) -> np.ndarray:
    """Paint shapes in order onto a background label map."""
    label_map = np.full((height, width), background, dtype=np.int64)
    yy, xx = np.ogrid[:height, :width]
    for shape in shapes:
        label_map[shape.contains(yy, xx)] = shape.class_index
    return label_map


def render_image(
    label_map: np.ndarray,
    palette: ClassPalette,
    rng: np.random.Generator,
    noise_std: float,
) -> np.ndarray:
    """Palette colors plus additive Gaussian noise, quantized to 8-bit levels.

    Quantization keeps generated images exactly representable as PNG, so a
    corpus round-trips losslessly.
    """
    clean = palette.render(label_map).astype(np.float64) / 255.0
    noisy = clean + rng.normal(0.0, noise_std, size=clean.shape)
    u8 = np.clip(np.rint(noisy * 255.0), 0, 255).astype(np.uint8)
    return (u8.astype(np.float32)) / np.float32(255.0)


def generate_scene(seed: int, config: SceneConfig) -> Sample:
    """Deterministically generate one labelled scene from (seed, config)."""
    if config.height % 8 != 0 or config.width % 8 != 0:
        raise ValueError(f"scene size {config.height}x{config.width} must be divisible by 8")
    palette = config.palette()
    vocabulary = config.vocabulary()

    shapes = place_shapes(seed, config, palette)
    label_map = rasterize_shapes(shapes, config.height, config.width)

    # Separate stream for pixel noise so geometry and rendering decouple.
    noise_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    image = render_image(label_map, palette, noise_rng, config.noise_std)

    damage = damage_oracle(label_map, palette, config.damage_thresholds)

    qa_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0A]))
    templates = [t for t in build_question_templates(palette) if t.kind in config.question_kinds]
    qa: list[QA] = []
    if templates and config.qa_per_scene > 0:
        k = min(config.qa_per_scene, len(templates))
        chosen = qa_rng.choice(len(templates), size=k, replace=False)
        for i in sorted(int(c) for c in chosen):
            t = templates[i]
            answer = answer_oracle(label_map, t.question_id, palette, vocabulary)
            qa.append(QA(t.question_id, t.text, answer))
    return Sample(image=image, label_map=label_map, damage=damage, qa=qa)


def generate_corpus(base_seed: int, n: int, config: SceneConfig) -> list[Sample]:
    """n scenes with per-sample seeds; order-independent and parallel-safe."""
    return [generate_scene(base_seed + i, config) for i in range(n)]
