"""Label-map oracles: programmatic ground truth for questions and damage extent.

Answers are always a pure function of the label map, so any trained model can
be scored against a recomputable reference.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .palettes import (
    DAMAGED_BUILDING_KINDS,
    DRY_KINDS,
    FLOODED_KINDS,
    ClassKind,
    ClassPalette,
)


class DamageClass(Enum):
    SUPERFICIAL = 0
    MEDIUM = 1
    MAJOR = 2


@dataclass(frozen=True)
class DamageThresholds:
    # Fraction of the scene covered by debris that alone makes damage "major".
    debris_major_fraction: float = 0.5


# Kinds it makes sense to count or ask presence for.
_QUESTIONABLE_KINDS = (
    ClassKind.BUILDING_OK,
    ClassKind.BUILDING_MINOR,
    ClassKind.BUILDING_MAJOR,
    ClassKind.BUILDING_DESTROYED,
    ClassKind.BUILDING_DRY,
    ClassKind.BUILDING_FLOODED,
    ClassKind.ROAD_CLEAR,
    ClassKind.ROAD_FLOODED,
    ClassKind.WATER,
    ClassKind.TREE,
    ClassKind.VEHICLE,
    ClassKind.POOL,
    ClassKind.DEBRIS,
)


@dataclass(frozen=True)
class QuestionTemplate:
    question_id: int
    kind: str  # "count" | "presence" | "condition"
    class_index: int | None
    text: str


def build_question_templates(palette: ClassPalette) -> list[QuestionTemplate]:
    """Closed question set for a palette: counting, presence, overall condition.

    The template order (and hence each question id) is a deterministic
    function of the palette.
    """
    templates: list[QuestionTemplate] = []
    qid = 0
    for idx, cls in enumerate(palette.classes):
        if cls.kind not in _QUESTIONABLE_KINDS:
            continue
        templates.append(
            QuestionTemplate(qid, "count", idx, f"how many {cls.name} regions are visible")
        )
        qid += 1
        templates.append(
            QuestionTemplate(qid, "presence", idx, f"is any {cls.name} area visible")
        )
        qid += 1
    has_flood_states = bool(
        palette.indices_of_kind(ClassKind.BUILDING_FLOODED, ClassKind.ROAD_FLOODED)
    )
    if has_flood_states:
        templates.append(
            QuestionTemplate(qid, "condition", None, "what is the overall condition of the scene")
        )
    return templates


@dataclass(frozen=True)
class AnswerVocabulary:
    """Ordered answer strings shared by the oracles and the VQA head."""

    answers: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.answers)) != len(self.answers):
            raise ValueError("answer vocabulary contains duplicates")

    @property
    def size(self) -> int:
        return len(self.answers)

    def index(self, answer: str) -> int:
        try:
            return self.answers.index(answer)
        except ValueError:
            raise KeyError(f"answer {answer!r} not in vocabulary") from None

    @property
    def max_count(self) -> int:
        counts = [int(a) for a in self.answers if a.isdigit()]
        if not counts:
            raise ValueError("vocabulary has no numeric answers")
        return max(counts)


def default_answer_vocabulary(max_count: int = 8) -> AnswerVocabulary:
    words = ("yes", "no", "flooded", "non-flooded")
    return AnswerVocabulary(words + tuple(str(i) for i in range(max_count + 1)))


def full_scale_answer_vocabulary() -> AnswerVocabulary:
    """56-answer configuration used by the full-scale VQA head."""
    words = ("yes", "no", "flooded", "non-flooded")
    return AnswerVocabulary(words + tuple(str(i) for i in range(52)))


def count_components(binary: np.ndarray) -> int:
    """Number of 4-connected components of True pixels."""
    binary = np.asarray(binary, dtype=bool)
    seen = np.zeros_like(binary, dtype=bool)
    h, w = binary.shape
    count = 0
    for sy in range(h):
        for sx in range(w):
            if not binary[sy, sx] or seen[sy, sx]:
                continue
            count += 1
            stack = [(sy, sx)]
            seen[sy, sx] = True
            while stack:
                y, x = stack.pop()
                for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                    if 0 <= ny < h and 0 <= nx < w and binary[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        stack.append((ny, nx))
    return count


def scene_condition(label_map: np.ndarray, palette: ClassPalette) -> str:
    """Majority rule: "flooded" iff flood-indicator pixels outnumber dry ones."""
    label_map = np.asarray(label_map)
    flooded_idx = palette.indices_of_kind(*FLOODED_KINDS)
    dry_idx = palette.indices_of_kind(*DRY_KINDS)
    flooded = int(np.isin(label_map, flooded_idx).sum())
    dry = int(np.isin(label_map, dry_idx).sum())
    return "flooded" if flooded > dry else "non-flooded"


def answer_oracle(
    label_map: np.ndarray,
    question_id: int,
    palette: ClassPalette,
    vocabulary: AnswerVocabulary | None = None,
) -> int:
    """Answer a template question from the label map alone.

    Counting uses 4-connected components; counts are capped at the largest
    numeric answer in the vocabulary.
    """
    vocabulary = vocabulary or default_answer_vocabulary()
    templates = build_question_templates(palette)
    if not 0 <= question_id < len(templates):
        raise KeyError(f"unknown question_id {question_id}")
    t = templates[question_id]
    label_map = np.asarray(label_map)
    if t.kind == "count":
        n = count_components(label_map == t.class_index)
        return vocabulary.index(str(min(n, vocabulary.max_count)))
    if t.kind == "presence":
        present = bool((label_map == t.class_index).any())
        return vocabulary.index("yes" if present else "no")
    if t.kind == "condition":
        return vocabulary.index(scene_condition(label_map, palette))
    raise KeyError(f"unknown question kind {t.kind!r}")


def damage_oracle(
    label_map: np.ndarray,
    palette: ClassPalette,
    thresholds: DamageThresholds = DamageThresholds(),
) -> DamageClass:
    """Damage extent from the label map.

    Major: any totally-destroyed building, or debris covering at least the
    configured fraction of the scene. Superficial: no damaged buildings.
    Medium: everything in between. The major checks run first so that a
    debris-covered scene without damaged buildings still counts as major.
    """
    label_map = np.asarray(label_map)
    destroyed_idx = palette.indices_of_kind(ClassKind.BUILDING_DESTROYED)
    debris_idx = palette.indices_of_kind(ClassKind.DEBRIS)
    damaged_idx = palette.indices_of_kind(*DAMAGED_BUILDING_KINDS)

    if destroyed_idx and bool(np.isin(label_map, destroyed_idx).any()):
        return DamageClass.MAJOR
    if debris_idx:
        debris_frac = float(np.isin(label_map, debris_idx).mean())
        if debris_frac >= thresholds.debris_major_fraction:
            return DamageClass.MAJOR
    if damaged_idx and bool(np.isin(label_map, damaged_idx).any()):
        return DamageClass.MEDIUM
    return DamageClass.SUPERFICIAL
