"""Versioned, checksummed binary checkpoints.

Layout (little-endian)::

    b"DIDFCKPT" | u32 format_version | u32 n | n bytes config JSON
    | u32 tensor count | per tensor: u16 name length, name (utf-8),
      u8 ndim, u32 dims..., float32 payload
    | 32-byte SHA-256 of everything before it
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .net import FORMAT_VERSION, ModelParams, init_params
from .trainer import TrainConfig

MAGIC = b"DIDFCKPT"
_DIGEST = 32


def dumps(params: ModelParams, config: TrainConfig) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<I", params.format_version)
    cfg = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    out += struct.pack("<I", len(cfg)) + cfg
    arrays = list(params.named_arrays())
    out += struct.pack("<I", len(arrays))
    for name, arr in arrays:
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    out += hashlib.sha256(out).digest()
    return bytes(out)


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes):
    """Parse checkpoint bytes into ``(ModelParams, TrainConfig)``."""
    if len(data) < len(MAGIC) + 4 + _DIGEST or not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version} (this build reads {FORMAT_VERSION})")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch: file is corrupt")

    r = _Reader(body)
    r.take(len(MAGIC) + 4)
    (cfg_len,) = r.unpack("<I")
    try:
        config = TrainConfig.from_dict(json.loads(r.take(cfg_len).decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"bad config block: {exc}") from None
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * size), dtype="<f4").astype(np.float32).reshape(shape)
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after tensor table")

    params = init_params(0)
    expected = dict(params.named_arrays())
    if set(tensors) != set(expected):
        raise CheckpointError(f"tensor set mismatch: missing {sorted(set(expected) - set(tensors))}, "
                              f"unexpected {sorted(set(tensors) - set(expected))}")
    for name, arr in tensors.items():
        if arr.shape != expected[name].shape:
            raise CheckpointError(f"{name}: shape {arr.shape}, expected {expected[name].shape}")
        params.set(name, arr)
    params.format_version = version
    return params, config


def save_checkpoint(params: ModelParams, config: TrainConfig, path):
    Path(path).write_bytes(dumps(params, config))


def load_checkpoint(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint: {exc.strerror}") from None
    return loads(data)
