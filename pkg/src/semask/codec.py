"""Lossless run-length codec for (masked) label maps.

Wire format, versioned by the magic string:

    magic   b"SMC1"                      4 bytes
    width   uint16 little-endian         2 bytes
    labels  uint8 label-space size       1 byte
    runs    (label uint8, length uint32 little-endian) x N, row-major,
            maximal runs                 5 bytes each

Height is not stored: it is the run-length total divided by the width.
Dropped pixels carry the reserved label K (one past the palette), so
heavily masked maps collapse into long runs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SMC1"
HEADER = struct.Struct("<4sHB")
RUN = struct.Struct("<BI")


@dataclass(frozen=True)
class EncodedMask:
    data: bytes
    width: int
    height: int
    num_labels: int

    @property
    def size_bytes(self) -> int:
        return len(self.data)

    @property
    def size_bits(self) -> int:
        return 8 * len(self.data)


def encode_label_map(label_map: np.ndarray, num_labels: int | None = None) -> EncodedMask:
    """Encode a H×W label map (values may include the reserved dropped label)."""
    label_map = np.asarray(label_map)
    if label_map.ndim != 2:
        raise ValueError(f"expected 2-D label map, got shape {label_map.shape}")
    height, width = label_map.shape
    if height >= 2**16 or width >= 2**16:
        raise ValueError(f"dimensions {height}x{width} exceed 16-bit header fields")
    flat = label_map.reshape(-1)
    if flat.size and (flat.min() < 0 or flat.max() >= 255):
        raise ValueError("labels must be in [0, 255)")
    if num_labels is None:
        num_labels = int(flat.max()) + 1 if flat.size else 1
    if not 0 < num_labels <= 255:
        raise ValueError(f"num_labels {num_labels} out of range")

    parts = [HEADER.pack(MAGIC, width, num_labels)]
    if flat.size:
        boundaries = np.flatnonzero(np.diff(flat)) + 1
        starts = np.concatenate(([0], boundaries))
        ends = np.concatenate((boundaries, [flat.size]))
        for start, end in zip(starts, ends):
            parts.append(RUN.pack(int(flat[start]), int(end - start)))
    return EncodedMask(b"".join(parts), width, height, num_labels)


def decode_label_map(encoded: EncodedMask | bytes) -> np.ndarray:
    data = encoded.data if isinstance(encoded, EncodedMask) else encoded
    if len(data) < HEADER.size:
        raise ValueError("truncated header")
    magic, width, num_labels = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    body = data[HEADER.size :]
    if len(body) % RUN.size != 0:
        raise ValueError("truncated run stream")

    labels, lengths = [], []
    for off in range(0, len(body), RUN.size):
        label, length = RUN.unpack_from(body, off)
        labels.append(label)
        lengths.append(length)
    total = int(sum(lengths))
    if width == 0:
        if total:
            raise ValueError("nonzero pixel count with zero width")
        return np.zeros((0, 0), dtype=np.int64)
    if total % width != 0:
        raise ValueError(f"run total {total} not divisible by width {width}")
    flat = np.repeat(np.asarray(labels, dtype=np.int64), np.asarray(lengths, dtype=np.int64))
    if flat.size and flat.max() >= num_labels:
        raise ValueError("run label exceeds header label-space size")
    return flat.reshape(total // width, width)


def payload_bits_raw_image(height: int, width: int, channels: int = 3, bit_depth: int = 8) -> int:
    """Transmitted size of an uncompressed image."""
    return height * width * channels * bit_depth


def payload_bits_label_map(label_map: np.ndarray, num_labels: int | None = None) -> int:
    """Transmitted size of a run-length-coded label map (masked or not)."""
    return encode_label_map(label_map, num_labels=num_labels).size_bits
