"""Binary checkpoints.

Layout (little-endian)::

    b"CLDS" | version u32 | step u64 | tensor count u32
    per tensor: name length u16 | utf-8 name | ndim u8 | dims u32 * ndim
    float32 blobs, in table order

Parameters come first in declared order, then optimizer moments
(``adam.m.<name>``, ``adam.v.<name>``) when present. The detector config is
stored as a JSON tensor-free trailer so a checkpoint is self-describing.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .._fs import atomic_write_bytes
from .model import DetectorConfig, DetectorState, param_shapes

MAGIC = b"CLDS"
VERSION = 1


def state_to_bytes(state: DetectorState) -> bytes:
    order = list(param_shapes(state.cfg))
    tensors = [(name, state.params[name]) for name in order]
    if state.adam_m:
        tensors += [(f"adam.m.{n}", state.adam_m[n]) for n in order]
        tensors += [(f"adam.v.{n}", state.adam_v[n]) for n in order]
    head = [struct.pack("<4sIQI", MAGIC, VERSION, state.step, len(tensors))]
    for name, arr in tensors:
        raw = name.encode()
        head.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
                    + struct.pack(f"<{arr.ndim}I", *arr.shape))
    blobs = [np.ascontiguousarray(arr, dtype="<f4").tobytes() for _, arr in tensors]
    cfg = asdict(state.cfg)
    cfg["classes"] = list(cfg["classes"])
    trailer = json.dumps(cfg, sort_keys=True).encode()
    return b"".join(head) + b"".join(blobs) + struct.pack("<I", len(trailer)) + trailer


def state_from_bytes(data: bytes) -> DetectorState:
    try:
        return _parse(data)
    except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"truncated or corrupt checkpoint ({exc})") from exc


def _parse(data: bytes) -> DetectorState:
    magic, version, step, count = struct.unpack_from("<4sIQI", data)
    if magic != MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = struct.calcsize("<4sIQI")
    table = []
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + n].decode()
        off += n
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        table.append((name, shape))
    arrays = {}
    for name, shape in table:
        size = int(np.prod(shape)) if shape else 1
        if off + 4 * size > len(data):
            raise ValueError(f"checkpoint truncated inside tensor {name}")
        arrays[name] = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(shape).copy()
        off += 4 * size
    (n,) = struct.unpack_from("<I", data, off)
    cfg = json.loads(data[off + 4:off + 4 + n])
    cfg["classes"] = tuple(cfg["classes"])
    cfg = DetectorConfig(**cfg)
    dtype = np.dtype(cfg.dtype)
    expected = param_shapes(cfg)
    params = {k: arrays[k].astype(dtype) for k in expected}
    for k, shape in expected.items():
        if params[k].shape != tuple(shape):
            raise ValueError(f"tensor {k} has shape {params[k].shape}, config expects {shape}")
    m = {k: arrays[f"adam.m.{k}"].astype(dtype) for k in expected if f"adam.m.{k}" in arrays}
    v = {k: arrays[f"adam.v.{k}"].astype(dtype) for k in expected if f"adam.v.{k}" in arrays}
    return DetectorState(cfg, params, m, v, int(step))


def save_checkpoint(path: Path, state: DetectorState) -> None:
    atomic_write_bytes(Path(path), state_to_bytes(state))


def load_checkpoint(path: Path) -> DetectorState:
    return state_from_bytes(Path(path).read_bytes())
