"""Corpus persistence: images/, masks/, qa.jsonl, labels.csv, split files.

The on-disk layout mirrors the aerial-survey corpora this package stands in
for: 8-bit RGB images, single-channel label-index masks, one JSON record per
question, and a damage label per image.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .oracles import AnswerVocabulary, DamageClass
from .palettes import ClassPalette, load_palette, save_palette
from .scenes import QA, Sample


class CorpusError(Exception):
    """Raised when an on-disk corpus is malformed; message lists offending paths."""


DEFAULT_FRACTIONS = (0.6, 0.2, 0.2)


@dataclass(frozen=True)
class CorpusSplit:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]

    def __post_init__(self) -> None:
        all_idx = self.train + self.val + self.test
        if len(set(all_idx)) != len(all_idx):
            raise ValueError("split index lists overlap")

    @property
    def size(self) -> int:
        return len(self.train) + len(self.val) + len(self.test)


def split_indices(
    n: int,
    seed: int = 0,
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
) -> CorpusSplit:
    """Disjoint, exhaustive train/val/test indices at the given proportions."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(n * fractions[0])
    n_val = int(n * fractions[1])
    return CorpusSplit(
        train=tuple(int(i) for i in perm[:n_train]),
        val=tuple(int(i) for i in perm[n_train : n_train + n_val]),
        test=tuple(int(i) for i in perm[n_train + n_val :]),
    )


def _stem(index: int) -> str:
    return f"scene_{index:05d}"


def save_corpus(
    samples: list[Sample],
    root: str | Path,
    palette: ClassPalette,
    vocabulary: AnswerVocabulary,
    split: CorpusSplit | None = None,
) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    save_palette(palette, root / "palette.json")
    (root / "answers.json").write_text(json.dumps(list(vocabulary.answers), indent=2) + "\n")

    with open(root / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stem", "damage"])
        for i, sample in enumerate(samples):
            writer.writerow([_stem(i), sample.damage.name.lower()])

    with open(root / "qa.jsonl", "w") as fh:
        for i, sample in enumerate(samples):
            for qa in sample.qa:
                record = {
                    "stem": _stem(i),
                    "question_id": qa.question_id,
                    "question": qa.question_text,
                    "answer": vocabulary.answers[qa.answer_id],
                }
                fh.write(json.dumps(record) + "\n")

    for i, sample in enumerate(samples):
        u8 = np.clip(np.rint(sample.image * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(u8, mode="RGB").save(root / "images" / f"{_stem(i)}.png")
        if sample.label_map.max() > 255:
            raise ValueError("label values exceed 8-bit mask range")
        Image.fromarray(sample.label_map.astype(np.uint8), mode="L").save(
            root / "masks" / f"{_stem(i)}.png"
        )

    if split is not None:
        payload = {
            "train": [_stem(i) for i in split.train],
            "val": [_stem(i) for i in split.val],
            "test": [_stem(i) for i in split.test],
        }
        (root / "splits.json").write_text(json.dumps(payload, indent=2) + "\n")


def load_corpus(
    root: str | Path,
    split_seed: int = 0,
) -> tuple[list[Sample], CorpusSplit, ClassPalette, AnswerVocabulary]:
    """Load a corpus directory; generate a 0.6/0.2/0.2 split unless one is stored."""
    root = Path(root)
    problems: list[str] = []

    image_dir, mask_dir = root / "images", root / "masks"
    if not image_dir.is_dir():
        return [], CorpusSplit((), (), ()), _load_palette_or_default(root), _load_vocab_or_default(root)

    palette = _load_palette_or_default(root)
    vocabulary = _load_vocab_or_default(root)
    K = palette.num_classes

    stems = sorted(p.stem for p in image_dir.glob("*.png"))
    damages = _read_damage_labels(root / "labels.csv", problems)
    qa_by_stem = _read_qa(root / "qa.jsonl", vocabulary, problems)

    samples: list[Sample] = []
    for stem in stems:
        mask_path = mask_dir / f"{stem}.png"
        if not mask_path.exists():
            problems.append(f"missing mask for image: {mask_path}")
            continue
        image = np.asarray(Image.open(image_dir / f"{stem}.png").convert("RGB"))
        label_map = np.asarray(Image.open(mask_path), dtype=np.int64)
        if label_map.ndim != 2:
            problems.append(f"mask is not single-channel: {mask_path}")
            continue
        if label_map.max(initial=0) >= K:
            problems.append(f"label value {int(label_map.max())} >= K={K}: {mask_path}")
            continue
        samples.append(
            Sample(
                image=image.astype(np.float32) / np.float32(255.0),
                label_map=label_map,
                damage=damages.get(stem, DamageClass.SUPERFICIAL),
                qa=qa_by_stem.get(stem, []),
            )
        )

    if problems:
        raise CorpusError("corpus has problems:\n" + "\n".join(problems))

    split_path = root / "splits.json"
    if split_path.exists():
        stored = json.loads(split_path.read_text())
        by_stem = {s: i for i, s in enumerate(stems)}
        split = CorpusSplit(
            train=tuple(by_stem[s] for s in stored["train"]),
            val=tuple(by_stem[s] for s in stored["val"]),
            test=tuple(by_stem[s] for s in stored["test"]),
        )
    else:
        split = split_indices(len(samples), seed=split_seed)
    return samples, split, palette, vocabulary


def _load_palette_or_default(root: Path) -> ClassPalette:
    path = root / "palette.json"
    if path.exists():
        return load_palette(path)
    from .palettes import rescuenet_palette

    return rescuenet_palette()


def _load_vocab_or_default(root: Path) -> AnswerVocabulary:
    path = root / "answers.json"
    if path.exists():
        return AnswerVocabulary(tuple(json.loads(path.read_text())))
    from .oracles import default_answer_vocabulary

    return default_answer_vocabulary()


def _read_damage_labels(path: Path, problems: list[str]) -> dict[str, DamageClass]:
    out: dict[str, DamageClass] = {}
    if not path.exists():
        return out
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                out[row["stem"]] = DamageClass[row["damage"].upper()]
            except (KeyError, AttributeError):
                problems.append(f"malformed damage record {row!r}: {path}")
    return out


def _read_qa(
    path: Path, vocabulary: AnswerVocabulary, problems: list[str]
) -> dict[str, list[QA]]:
    out: dict[str, list[QA]] = {}
    if not path.exists():
        return out
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                qa = QA(int(rec["question_id"]), rec["question"], vocabulary.index(rec["answer"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                problems.append(f"malformed qa record (line {lineno}, {exc}): {path}")
                continue
            out.setdefault(rec["stem"], []).append(qa)
    return out
