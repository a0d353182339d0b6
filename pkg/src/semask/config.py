"""Experiment configuration: one JSON document fully determines a run.

Loading is strict (unknown keys are rejected) and the resolved config, with
every default filled in, is echoed into each run directory so any artifact
can be reproduced from its frozen copy.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .downstream import ClassifierConfig, VQAConfig
from .link import LinkParams
from .masking import MaskPredictorConfig
from .scenes import SceneConfig
from .segmentation import SegConfig
from .training import LossWeights, TrainSchedule


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    task: str = "classification"  # "classification" | "vqa"
    n_scenes: int = 128
    scene: SceneConfig = field(default_factory=SceneConfig)
    seg: SegConfig = field(default_factory=SegConfig)
    seg_schedule: TrainSchedule = field(default_factory=lambda: TrainSchedule(epochs=20))
    mask: MaskPredictorConfig = field(default_factory=MaskPredictorConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    vqa: VQAConfig = field(default_factory=VQAConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    joint_schedule: TrainSchedule = field(default_factory=lambda: TrainSchedule(epochs=15))
    link: LinkParams = field(default_factory=LinkParams)
    fidelity_threshold: float = 0.01

    def __post_init__(self) -> None:
        if self.task not in ("classification", "vqa"):
            raise ConfigError(f"unknown task {self.task!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _coerce(target, value, path: str):
    origin = typing.get_origin(target)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(target) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, path)
    if dataclasses.is_dataclass(target):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected object for {target.__name__}")
        return _load_dataclass(target, value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected array")
        args = typing.get_args(target)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if args and len(args) != len(value):
            raise ConfigError(f"{path}: expected {len(args)} entries, got {len(value)}")
        return tuple(
            _coerce(args[i] if args else typing.Any, v, f"{path}[{i}]")
            for i, v in enumerate(value)
        )
    if target is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{path}: expected number")
        return float(value)
    if target is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{path}: expected integer")
        return value
    if target is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected boolean")
        return value
    if target is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string")
        return value
    return value


def _load_dataclass(cls, data: dict, path: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path or cls.__name__}: unknown keys {unknown}")
    kwargs = {
        key: _coerce(hints[key], value, f"{path}.{key}" if path else key)
        for key, value in data.items()
    }
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or cls.__name__}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    return _load_dataclass(ExperimentConfig, data)


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return config_from_dict(raw)
