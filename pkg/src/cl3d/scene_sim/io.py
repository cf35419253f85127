"""Frame and label serialization.

Frames use a small little-endian binary layout::

    b"CLPF" | version u32 | point count u32 | device kind u8 | count * 3 float32

Labels go to a JSON-lines sidecar, one object per line.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .._fs import atomic_write_bytes, atomic_write_text
from .types import PRESETS, DeviceKind, DeviceModel, ObjectLabel, PointFrame

FRAME_MAGIC = b"CLPF"
FRAME_VERSION = 1
_HEADER = struct.Struct("<4sIIB")


def frame_to_bytes(frame: PointFrame) -> bytes:
    pts = np.ascontiguousarray(frame.points, dtype="<f4").reshape(-1, 3)
    header = _HEADER.pack(FRAME_MAGIC, FRAME_VERSION, len(pts), frame.device.kind.code)
    return header + pts.tobytes()


def frame_from_bytes(data: bytes, device: DeviceModel | None = None, timestamp: float = 0.0,
                     frame_index: int = 0) -> PointFrame:
    if len(data) < _HEADER.size:
        raise ValueError("truncated frame header")
    magic, version, count, kind = _HEADER.unpack_from(data)
    if magic != FRAME_MAGIC:
        raise ValueError(f"bad frame magic {magic!r}")
    if version != FRAME_VERSION:
        raise ValueError(f"unsupported frame version {version}")
    body = data[_HEADER.size:]
    if len(body) != count * 12:
        raise ValueError(f"frame body holds {len(body)} bytes, expected {count * 12}")
    kind = DeviceKind.from_code(kind)
    if device is None:
        device = PRESETS[kind.value]
    elif device.kind is not kind:
        raise ValueError(f"frame was written by a {kind.value} device, not {device.kind.value}")
    pts = np.frombuffer(body, dtype="<f4").reshape(count, 3).astype(np.float32)
    return PointFrame(pts, timestamp, device, frame_index)


def write_frame(path: Path, frame: PointFrame) -> None:
    atomic_write_bytes(Path(path), frame_to_bytes(frame))


def read_frame(path: Path, device: DeviceModel | None = None, **kwargs) -> PointFrame:
    return frame_from_bytes(Path(path).read_bytes(), device, **kwargs)


def labels_to_jsonl(labels: list[ObjectLabel]) -> str:
    return "".join(json.dumps(lab.to_json(), sort_keys=True) + "\n" for lab in labels)


def labels_from_jsonl(text: str) -> list[ObjectLabel]:
    return [ObjectLabel.from_json(json.loads(line)) for line in text.splitlines() if line.strip()]


def write_labels(path: Path, labels: list[ObjectLabel]) -> None:
    atomic_write_text(Path(path), labels_to_jsonl(labels))


def read_labels(path: Path) -> list[ObjectLabel]:
    return labels_from_jsonl(Path(path).read_text())
