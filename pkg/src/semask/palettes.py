"""Class palettes: the label spaces scenes are segmented into.

Each class carries a semantic kind so that the label oracles (counting,
presence, flood condition, damage extent) can reason about label maps
without hard-coding class indices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path


class ClassKind(str, Enum):
    BACKGROUND = "background"
    BUILDING_OK = "building_ok"
    BUILDING_MINOR = "building_minor"
    BUILDING_MAJOR = "building_major"
    BUILDING_DESTROYED = "building_destroyed"
    BUILDING_DRY = "building_dry"
    BUILDING_FLOODED = "building_flooded"
    ROAD_CLEAR = "road_clear"
    ROAD_FLOODED = "road_flooded"
    WATER = "water"
    TREE = "tree"
    VEHICLE = "vehicle"
    POOL = "pool"
    GRASS = "grass"
    DEBRIS = "debris"


# Kinds that indicate standing water when judging the overall scene condition.
FLOODED_KINDS = frozenset(
    {ClassKind.WATER, ClassKind.BUILDING_FLOODED, ClassKind.ROAD_FLOODED}
)
DRY_KINDS = frozenset(
    {ClassKind.BUILDING_DRY, ClassKind.ROAD_CLEAR, ClassKind.GRASS}
)
DAMAGED_BUILDING_KINDS = frozenset(
    {ClassKind.BUILDING_MINOR, ClassKind.BUILDING_MAJOR, ClassKind.BUILDING_DESTROYED}
)


@dataclass(frozen=True)
class ClassDef:
    name: str
    color: tuple[int, int, int]
    kind: ClassKind


@dataclass(frozen=True)
class ClassPalette:
    """Ordered set of classes; the class index is the label value."""

    classes: tuple[ClassDef, ...]

    def __post_init__(self) -> None:
        if len(self.classes) < 2:
            raise ValueError("palette needs at least 2 classes")
        colors = [c.color for c in self.classes]
        if len(set(colors)) != len(colors):
            raise ValueError("palette colors must be pairwise distinct")
        if any(c.color == (0, 0, 0) for c in self.classes):
            # Pure black is reserved for dropped pixels in masked renderings.
            raise ValueError("palette colors must not be pure black")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.classes)

    @property
    def dropped_label(self) -> int:
        """Reserved label for pixels removed by a binary mask."""
        return len(self.classes)

    def color_array(self):
        import numpy as np

        return np.array([c.color for c in self.classes], dtype=np.uint8)

    def indices_of_kind(self, *kinds: ClassKind) -> list[int]:
        wanted = set(kinds)
        return [i for i, c in enumerate(self.classes) if c.kind in wanted]

    def index_of_name(self, name: str) -> int:
        for i, c in enumerate(self.classes):
            if c.name == name:
                return i
        raise KeyError(name)

    def render(self, label_map, dropped_color=(0, 0, 0)):
        """Map a label map (values < K, or K for dropped) to an RGB uint8 image."""
        import numpy as np

        label_map = np.asarray(label_map)
        lut = np.vstack([self.color_array(), np.array([dropped_color], dtype=np.uint8)])
        if label_map.min() < 0 or label_map.max() > self.dropped_label:
            raise ValueError("label map values outside palette range")
        return lut[label_map]

    def labels_from_rgb(self, rgb):
        """Invert :meth:`render` for exact palette colors (dropped maps to K)."""
        import numpy as np

        rgb = np.asarray(rgb, dtype=np.uint8)
        lut = np.vstack([self.color_array(), np.zeros((1, 3), dtype=np.uint8)])
        flat = rgb.reshape(-1, 3)
        out = np.empty(flat.shape[0], dtype=np.int64)
        matched = np.zeros(flat.shape[0], dtype=bool)
        for idx in range(lut.shape[0]):
            hit = (flat == lut[idx]).all(axis=1) & ~matched
            out[hit] = idx if idx < self.num_classes else self.dropped_label
            matched |= hit
        if not matched.all():
            raise ValueError("rgb contains colors outside the palette")
        return out.reshape(rgb.shape[:2])


def rescuenet_palette() -> ClassPalette:
    """Ten classes mirroring a post-hurricane damage-assessment label space."""
    return ClassPalette(
        (
            ClassDef("background", (70, 60, 50), ClassKind.BACKGROUND),
            ClassDef("building-no-damage", (180, 180, 180), ClassKind.BUILDING_OK),
            ClassDef("building-minor-damage", (230, 190, 70), ClassKind.BUILDING_MINOR),
            ClassDef("building-major-damage", (230, 120, 40), ClassKind.BUILDING_MAJOR),
            ClassDef("building-total-destruction", (200, 30, 30), ClassKind.BUILDING_DESTROYED),
            ClassDef("debris", (130, 90, 160), ClassKind.DEBRIS),
            ClassDef("water", (40, 90, 200), ClassKind.WATER),
            ClassDef("road-clear", (120, 120, 120), ClassKind.ROAD_CLEAR),
            ClassDef("tree", (30, 140, 60), ClassKind.TREE),
            ClassDef("vehicle", (240, 230, 50), ClassKind.VEHICLE),
        )
    )


def floodnet_palette() -> ClassPalette:
    """Ten classes mirroring a flood-survey label space."""
    return ClassPalette(
        (
            ClassDef("background", (70, 60, 50), ClassKind.BACKGROUND),
            ClassDef("building-flooded", (160, 60, 200), ClassKind.BUILDING_FLOODED),
            ClassDef("building-non-flooded", (180, 180, 180), ClassKind.BUILDING_DRY),
            ClassDef("road-flooded", (90, 110, 230), ClassKind.ROAD_FLOODED),
            ClassDef("road-non-flooded", (120, 120, 120), ClassKind.ROAD_CLEAR),
            ClassDef("water", (40, 90, 200), ClassKind.WATER),
            ClassDef("tree", (30, 140, 60), ClassKind.TREE),
            ClassDef("vehicle", (240, 230, 50), ClassKind.VEHICLE),
            ClassDef("pool", (80, 200, 220), ClassKind.POOL),
            ClassDef("grass", (110, 190, 90), ClassKind.GRASS),
        )
    )


PRESETS = {
    "rescuenet": rescuenet_palette,
    "floodnet": floodnet_palette,
}


def get_palette(preset: str) -> ClassPalette:
    try:
        return PRESETS[preset]()
    except KeyError:
        raise ValueError(f"unknown palette preset {preset!r}; options: {sorted(PRESETS)}") from None


def save_palette(palette: ClassPalette, path: str | Path) -> None:
    records = [
        {"name": c.name, "color": list(c.color), "kind": c.kind.value}
        for c in palette.classes
    ]
    Path(path).write_text(json.dumps(records, indent=2) + "\n")


def load_palette(path: str | Path) -> ClassPalette:
    records = json.loads(Path(path).read_text())
    classes = tuple(
        ClassDef(r["name"], tuple(r["color"]), ClassKind(r["kind"])) for r in records
    )
    return ClassPalette(classes)
