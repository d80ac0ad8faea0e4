"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    b"RWRN"  u32 version
    u32 config_len, config_len bytes of UTF-8 JSON
    u32 tensor_count
    per tensor: u32 name_len, name (UTF-8), u8 dtype tag, u32 rank,
                rank x u64 dims, little-endian payload
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .io_utils import atomic_write_bytes
from .model import RWResNet

MAGIC = b"RWRN"
VERSION = 1
DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
TAG_OF = {dt.name: tag for tag, dt in DTYPE_TAGS.items()}


@dataclass
class ModelParams:
    config: dict
    tensors: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)


def encode(params: ModelParams) -> bytes:
    cfg = json.dumps(params.config, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg, struct.pack("<I", len(params.tensors))]
    for name, arr in params.tensors.items():
        arr = np.asarray(arr)
        if arr.dtype.name not in TAG_OF:
            raise CheckpointError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<BI", TAG_OF[arr.dtype.name], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data, self.pos, self.source = data, 0, source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"{self.source}: truncated {what}: need {n} bytes at offset {self.pos}, "
                f"{len(self.data) - self.pos} available"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(data: bytes, source: str = "checkpoint") -> ModelParams:
    r = _Reader(data, source)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError(f"{source}: bad magic, not an RWRN checkpoint")
    version, cfg_len = r.unpack("<II", "header")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported format version {version} (expected {VERSION})")
    try:
        config = json.loads(r.take(cfg_len, "config block").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{source}: unreadable config block: {e}") from e
    (count,) = r.unpack("<I", "tensor count")
    tensors = OrderedDict()
    for i in range(count):
        what = f"record {i}"
        (name_len,) = r.unpack("<I", f"{what} name length")
        name = r.take(name_len, f"{what} name").decode("utf-8", errors="replace")
        what = f"record {i} ({name!r})"
        tag, rank = r.unpack("<BI", f"{what} header")
        if tag not in DTYPE_TAGS:
            raise CheckpointError(f"{source}: {what}: unknown dtype tag {tag}")
        dims = r.unpack(f"<{rank}Q", f"{what} dims")
        dt = DTYPE_TAGS[tag]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        payload = r.take(nbytes, f"{what} payload")
        tensors[name] = np.frombuffer(payload, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
    if r.pos != len(data):
        raise CheckpointError(f"{source}: {len(data) - r.pos} trailing bytes after the last record")
    return ModelParams(config, tensors)


def save_checkpoint(model: RWResNet, path) -> None:
    params = ModelParams(model.config(), OrderedDict(model.state_dict()))
    atomic_write_bytes(path, encode(params))


def load_checkpoint(path, expect: RWResNet | None = None) -> ModelParams:
    """Read a checkpoint; with ``expect``, verify names and shapes match it."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    params = decode(data, str(path))
    if expect is not None:
        check_compatible(params, expect)
    return params


def check_compatible(params: ModelParams, model: RWResNet) -> None:
    want = model.state_dict()
    for name, arr in want.items():
        got = params.tensors.get(name)
        if got is None:
            raise CheckpointError(f"checkpoint does not match model: tensor {name!r} missing")
        if got.shape != arr.shape:
            raise CheckpointError(
                f"checkpoint does not match model: tensor {name!r} has shape {got.shape}, model expects {arr.shape}"
            )
    for name in params.tensors:
        if name not in want:
            raise CheckpointError(f"checkpoint does not match model: unexpected tensor {name!r}")


def load_model(path) -> RWResNet:
    """Rebuild the model described by a checkpoint's config block and load its tensors."""
    params = load_checkpoint(path)
    try:
        model = RWResNet.from_config(params.config)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: invalid model config: {e}") from e
    check_compatible(params, model)
    model.load_state_dict(params.tensors)
    return model
