"""Versioned binary checkpoint format.

Layout, all integers little-endian::

    8 bytes   magic  b"WOUNDFMR"
    u32       format version
    u64       metadata length, then that many bytes of UTF-8 JSON
    u32       tensor count
    per tensor:
        u32   name length, then the UTF-8 name
        u32   ndim, then ndim x u64 dims
        float64 data ('<f8'), C order

Tensor names are prefixed ``model/`` (parameters and buffers), ``adam_m/`` and ``adam_v/``
(optimizer moments). The metadata holds the epoch, learning rate, scheduler and early-stop
states, optimizer step, generator state, run config and epoch history.
"""
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from src.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"WOUNDFMR"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def section(self, prefix: str) -> Dict[str, np.ndarray]:
        """Tensors under ``prefix/`` with the prefix stripped"""
        start = len(prefix) + 1
        return {name[start:]: value for name, value in self.tensors.items() if name.startswith(prefix + "/")}


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    meta = json.dumps(checkpoint.metadata, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(meta)), meta, struct.pack("<I", len(checkpoint.tensors))]
    for name, value in checkpoint.tensors.items():
        array = np.ascontiguousarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack(f"<I{array.ndim}Q", array.ndim, *array.shape))
        parts.append(array.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint: need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> Checkpoint:
    """Parse checkpoint bytes.

    Raises:
        CheckpointError: On a wrong magic string, unsupported version, truncation or trailing bytes
    """
    reader = _Reader(data)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, meta_length = reader.unpack("<IQ")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    try:
        metadata = json.loads(reader.take(meta_length).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint metadata: {exc}")

    (count,) = reader.unpack("<I")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_length,) = reader.unpack("<I")
        name = reader.take(name_length).decode("utf-8")
        (ndim,) = reader.unpack("<I")
        shape = reader.unpack(f"<{ndim}Q")
        n_bytes = 8 * int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(reader.take(n_bytes), dtype="<f8").reshape(shape).astype(np.float64)
    if reader.pos != len(data):
        raise CheckpointError(f"{len(data) - reader.pos} unexpected trailing bytes in checkpoint")
    return Checkpoint(tensors=tensors, metadata=metadata)


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(checkpoint))
    logger.info(f"Saved checkpoint to {path} (epoch {checkpoint.metadata.get('epoch')})")


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    checkpoint = decode_checkpoint(path.read_bytes())
    logger.info(f"Loaded checkpoint {path} ({len(checkpoint.tensors)} tensors)")
    return checkpoint
