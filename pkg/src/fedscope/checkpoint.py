"""Binary checkpoint container for named arrays; byte-exact round trips.

Layout (all integers little-endian):
  magic b"FSCK", u32 version,
  u32 entry count, then per entry:
    u16 name length, utf-8 name,
    u8 dtype code (0=float32, 1=float64, 2=int64),
    u8 ndim, u32 per dim, raw array bytes (C order, little-endian).
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

MAGIC = b"FSCK"
VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i8"): 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class CheckpointFormatError(ValueError):
    """Raised for unreadable or corrupt checkpoint files."""


def save_arrays(path: str, arrays: dict[str, np.ndarray]) -> None:
    """Write named arrays atomically (temp file + rename)."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _DTYPE_CODES:
            raise CheckpointFormatError(f"{name}: unsupported dtype {arr.dtype}")
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<BB", _DTYPE_CODES[dt], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype(dt, copy=False).tobytes())
    blob = b"".join(parts)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointFormatError(f"{self.path}: truncated file")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_arrays(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    if r.take(4) != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic, not a checkpoint")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        code, ndim = r.unpack("<BB")
        if code not in _CODE_DTYPES:
            raise CheckpointFormatError(f"{path}: unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}I")
        dt = _CODE_DTYPES[code]
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(r.take(n_bytes), dtype=dt).reshape(shape).copy()
        if name in out:
            raise CheckpointFormatError(f"{path}: duplicate entry {name!r}")
        out[name] = arr
    if r.pos != len(blob):
        raise CheckpointFormatError(f"{path}: {len(blob) - r.pos} trailing bytes")
    return out
