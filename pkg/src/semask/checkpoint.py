"""Versioned checkpoint container shared by every trainable module.

Format: a NumPy ``.npz`` archive. Weight arrays are stored under
``<section>/<parameter-name>`` keys (one section per module, e.g.
``segmentation`` or ``mask_predictor``); ``__meta__`` holds a JSON string
with the format version and a config echo. The format is stable across
runs: loading yields exactly the arrays that were saved.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from torch import nn

FORMAT_VERSION = "semask-checkpoint-v1"


def save_checkpoint(
    path: str | Path,
    sections: dict[str, nn.Module],
    meta: dict | None = None,
) -> None:
    arrays: dict[str, np.ndarray] = {}
    for section, module in sections.items():
        for name, tensor in module.state_dict().items():
            arrays[f"{section}/{name}"] = tensor.detach().cpu().numpy()
    payload = {"version": FORMAT_VERSION, "meta": meta or {}}
    arrays["__meta__"] = np.frombuffer(json.dumps(payload).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, dict[str, np.ndarray]]]:
    """Return (meta, {section: {param name: array}})."""
    with np.load(path) as archive:
        raw = bytes(archive["__meta__"].tobytes())
        payload = json.loads(raw.decode())
        if payload.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
        sections: dict[str, dict[str, np.ndarray]] = {}
        for key in archive.files:
            if key == "__meta__":
                continue
            section, name = key.split("/", 1)
            sections.setdefault(section, {})[name] = archive[key]
    return payload["meta"], sections


def load_into(module: nn.Module, arrays: dict[str, np.ndarray]) -> None:
    import torch

    state = {name: torch.from_numpy(np.array(a)) for name, a in arrays.items()}
    module.load_state_dict(state)
