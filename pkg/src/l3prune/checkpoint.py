"""Bit-exact binary checkpoint format.

Layout (all integers little-endian):

    8 bytes   magic "L3PRUNE1"
    u32       config text length, then that many UTF-8 bytes (key=value lines)
    repeated tensor records until 4 bytes remain:
        u32   name length, then UTF-8 name
        u32   rank, then rank u64 dims
        dims-product float64 values, row-major
    u32       CRC32 of every preceding byte

Tensors are written in the model's canonical naming order, so saving the
same model twice produces identical bytes.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import ModelConfig, Tensor, Transformer, init

MAGIC = b"L3PRUNE1"


class CheckpointError(DataError):
    """Base class for checkpoint format violations."""


class BadMagicError(CheckpointError):
    """The file does not start with the checkpoint magic."""


class TruncatedCheckpointError(CheckpointError):
    """The file ends before a complete record."""


class ChecksumError(CheckpointError):
    """The trailing CRC32 does not match the file contents."""


def save(model: Transformer, path: str | Path) -> None:
    parts = [MAGIC]
    config_bytes = model.config.to_text().encode("utf-8")
    parts.append(struct.pack("<I", len(config_bytes)))
    parts.append(config_bytes)
    for name, t in model.named_tensors():
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<I", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<I", t.data.ndim))
        parts.append(struct.pack(f"<{t.data.ndim}Q", *t.data.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data) - 4:
            raise TruncatedCheckpointError(
                f"checkpoint truncated at byte {self.pos} (needed {n} more)"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    @property
    def remaining(self) -> int:
        return len(self.data) - 4 - self.pos


def load(path: str | Path) -> Transformer:
    """Read a checkpoint; the result is bit-identical to what was saved.

    Structure is parsed before the CRC so a short file reports truncation
    rather than a checksum failure.
    """
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4:
        raise TruncatedCheckpointError(f"file too short to be a checkpoint: {len(raw)} bytes")
    if raw[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"not an L3P checkpoint: {path}")

    reader = _Reader(raw)
    reader.take(len(MAGIC))
    config_text = reader.take(reader.u32()).decode("utf-8")
    tensors: dict[str, np.ndarray] = {}
    while reader.remaining > 0:
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u32()
        dims = struct.unpack(f"<{rank}Q", reader.take(8 * rank))
        count = int(np.prod(dims)) if rank else 1
        payload = reader.take(8 * count)
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()

    stored_crc = struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(raw[:-4]) != stored_crc:
        raise ChecksumError(f"checksum mismatch in {path}")
    config = ModelConfig.from_text(config_text)

    model = init(config)
    expected = dict(model.named_tensors())
    if set(tensors) != set(expected):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise CheckpointError(f"tensor names do not match config: missing={missing} extra={extra}")
    for name, target in expected.items():
        arr = tensors[name]
        if arr.shape != target.data.shape:
            raise CheckpointError(
                f"tensor {name}: stored shape {arr.shape} != expected {target.data.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"tensor {name} contains non-finite values")
        target.data = np.ascontiguousarray(arr)
    return model
