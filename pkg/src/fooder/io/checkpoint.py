"""Binary model checkpoints.

Layout (little-endian)::

    b"FOODCKPT" | u16 version | u8 len + model kind | u32 n_records
    n_records x (u16 len + name | u8 ndim | u32 dims[ndim] | f32 data)
    u32 len + metadata JSON (seed, hyperparameters, loss history, ...)
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"FOODCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    state: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    kind = ckpt.kind.encode()
    parts = [MAGIC, struct.pack("<HB", VERSION, len(kind)), kind, struct.pack("<I", len(ckpt.state))]
    for name, arr in ckpt.state.items():
        if np.asarray(arr).dtype != np.float32:
            raise CheckpointError(f"{name}: only float32 tensors are stored, got {np.asarray(arr).dtype}")
        a = np.asarray(arr, dtype="<f4", order="C")
        nb = name.encode()
        parts += [struct.pack("<H", len(nb)), nb, struct.pack("<B", a.ndim), struct.pack(f"<{a.ndim}I", *a.shape),
                  a.tobytes()]
    meta = json.dumps(ckpt.metadata, sort_keys=True).encode()
    parts += [struct.pack("<I", len(meta)), meta]
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes, source: str):
        self.blob, self.pos, self.source = blob, 0, source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.source}: truncated while reading {what}")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))


def decode_checkpoint(blob: bytes, source: str = "<bytes>", expect_kind: str | None = None) -> Checkpoint:
    r = _Reader(blob, source)
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    version, klen = r.unpack("<HB", "version")
    if version != VERSION:
        raise CheckpointError(f"{source}: checkpoint version {version} is not supported (expected {VERSION})")
    kind = r.take(klen, "model kind").decode()
    if expect_kind is not None and kind != expect_kind:
        raise CheckpointError(f"{source}: holds a {kind!r} model, expected {expect_kind!r}")
    (n,) = r.unpack("<I", "record count")
    state = {}
    for _ in range(n):
        (nlen,) = r.unpack("<H", "record name length")
        name = r.take(nlen, "record name").decode()
        (ndim,) = r.unpack("<B", f"{name} rank")
        dims = r.unpack(f"<{ndim}I", f"{name} dims")
        count = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(r.take(4 * count, f"{name} data"), dtype="<f4").astype(np.float32)
        state[name] = data.reshape(dims)
    (mlen,) = r.unpack("<I", "metadata length")
    meta = json.loads(r.take(mlen, "metadata").decode())
    if r.pos != len(blob):
        raise CheckpointError(f"{source}: {len(blob) - r.pos} trailing bytes")
    return Checkpoint(kind, state, meta)


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike, expect_kind: str | None = None) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes(), str(path), expect_kind)
