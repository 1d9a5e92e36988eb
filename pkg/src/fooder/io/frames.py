"""FrameFile: little-endian binary container for cubes and images.

Layout::

    b"FOOD" | u16 version | u8 kind | u8 ndim | u32 dims[ndim] | f32 payload

Complex payloads (raw cubes) interleave re/im, so the payload holds
``prod(dims) * 2`` floats. Arrays are stored as float32 / complex64; a value
that is already in that precision round-trips bitwise.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FOOD"
VERSION = 1
KINDS = {"raw_cube": 0, "rdi": 1, "micro_rdi": 2}
KIND_NAMES = {v: k for k, v in KINDS.items()}
COMPLEX_KINDS = {"raw_cube"}
_HEAD = struct.Struct("<4sHBB")


class FormatError(ValueError):
    """Malformed or truncated file; nothing partial is ever returned."""


def encode_frames(array: np.ndarray, kind: str) -> bytes:
    if kind not in KINDS:
        raise ValueError(f"unknown frame kind {kind!r}; expected one of {sorted(KINDS)}")
    a = np.asarray(array)
    if kind in COMPLEX_KINDS:
        a = np.asarray(a, dtype=np.complex64, order="C")
        payload = a.view(np.float32).astype("<f4", copy=False)
    else:
        if np.iscomplexobj(a):
            raise ValueError(f"{kind} payload must be real")
        payload = np.asarray(a, dtype="<f4", order="C")
    if a.ndim > 255:
        raise ValueError("too many dimensions")
    if not np.all(np.isfinite(payload)):
        raise ValueError("refusing to write non-finite values")
    head = _HEAD.pack(MAGIC, VERSION, KINDS[kind], a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + payload.tobytes()


def decode_frames(blob: bytes, source: str = "<bytes>") -> tuple[np.ndarray, str]:
    if len(blob) < _HEAD.size:
        raise FormatError(f"{source}: truncated header ({len(blob)} bytes, need {_HEAD.size})")
    magic, version, kind_id, ndim = _HEAD.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported format version {version} (this build reads {VERSION})")
    if kind_id not in KIND_NAMES:
        raise FormatError(f"{source}: unknown kind id {kind_id}")
    kind = KIND_NAMES[kind_id]
    dims_end = _HEAD.size + 4 * ndim
    if len(blob) < dims_end:
        raise FormatError(f"{source}: truncated dimension list")
    dims = struct.unpack_from(f"<{ndim}I", blob, _HEAD.size)
    n_float = int(np.prod(dims, dtype=np.int64)) * (2 if kind in COMPLEX_KINDS else 1)
    expected = dims_end + 4 * n_float
    if len(blob) != expected:
        what = "truncated payload" if len(blob) < expected else "trailing bytes after payload"
        raise FormatError(f"{source}: {what}: {len(blob)} bytes, expected {expected} for dims {list(dims)}")
    data = np.frombuffer(blob, dtype="<f4", count=n_float, offset=dims_end).astype(np.float32)
    if kind in COMPLEX_KINDS:
        data = data.view(np.complex64)
    return data.reshape(dims), kind


def write_frames(path: str | os.PathLike, array: np.ndarray, kind: str) -> None:
    blob = encode_frames(array, kind)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def read_frames(path: str | os.PathLike, expect_kind: str | None = None) -> np.ndarray:
    data, kind = decode_frames(Path(path).read_bytes(), str(path))
    if expect_kind is not None and kind != expect_kind:
        raise FormatError(f"{path}: holds {kind}, expected {expect_kind}")
    return data


def read_frames_with_kind(path: str | os.PathLike) -> tuple[np.ndarray, str]:
    return decode_frames(Path(path).read_bytes(), str(path))
