"""
Binary checkpoint format (little-endian throughout)::

    b"BVIT" | u32 version=1 | u64 metadata length | metadata (UTF-8 JSON)
    u32 tensor count
    per tensor: u32 name length | name (UTF-8) | u32 rank | u64 dims[rank] | float32 values

Metadata must contain ``model_config``; tensors are validated against it on load.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict

import numpy as np

from .errors import FormatError, ShapeError
from .model import ModelConfig, ViTParams, parameter_shapes

MAGIC = b"BVIT"
VERSION = 1


@dataclass
class Checkpoint:
    params: ViTParams
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def config(self) -> ModelConfig:
        return self.params.config

    @property
    def class_names(self):
        return self.metadata.get("class_names")

    @property
    def epoch(self):
        return self.metadata.get("epoch")


def make_checkpoint(params: ViTParams, **metadata) -> Checkpoint:
    metadata.setdefault("normalization", "none")
    return Checkpoint(params.copy(), metadata)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    meta = dict(ckpt.metadata)
    meta["model_config"] = ckpt.config.to_dict()
    meta_bytes = json.dumps(meta, sort_keys=True, allow_nan=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(meta_bytes)), meta_bytes,
             struct.pack("<I", len(ckpt.params))]
    for name, t in ckpt.params.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}Q", *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    blob = encode_checkpoint(ckpt)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated file while reading {what} "
                              f"(need {n} bytes, {len(self.buf) - self.pos} left)", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    (meta_len,) = r.unpack("<Q", "metadata length")
    meta_at = r.pos
    try:
        metadata = json.loads(r.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"metadata is not valid UTF-8 JSON: {exc}", meta_at) from None
    if not isinstance(metadata, dict) or "model_config" not in metadata:
        raise FormatError("metadata lacks model_config", meta_at)
    try:
        config = ModelConfig.from_dict(metadata.pop("model_config"))
    except (TypeError, ValueError) as exc:
        raise FormatError(f"invalid model_config: {exc}", meta_at) from None

    expected = parameter_shapes(config)
    (count,) = r.unpack("<I", "tensor count")
    arrays = {}
    for _ in range(count):
        start = r.pos
        (name_len,) = r.unpack("<I", "tensor name length")
        try:
            name = r.take(name_len, "tensor name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not UTF-8", start) from None
        (rank,) = r.unpack("<I", f"rank of {name}")
        dims = r.unpack(f"<{rank}Q", f"dims of {name}")
        if name not in expected:
            raise FormatError(f"unexpected tensor {name!r} for this model config", start)
        if tuple(dims) != expected[name]:
            raise FormatError(f"tensor {name!r} has dims {dims}, config implies {expected[name]}", start)
        n = int(np.prod(dims, dtype=np.int64))
        raw = r.take(4 * n, f"values of {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after last tensor", r.pos)
    try:
        params = ViTParams.from_arrays(config, arrays)
    except ShapeError as exc:
        raise FormatError(str(exc), r.pos) from None
    return Checkpoint(params, metadata)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
