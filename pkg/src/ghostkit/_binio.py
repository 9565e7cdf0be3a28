"""Little-endian binary read/write helpers shared by the on-disk formats.

All toolkit files follow the same skeleton: 4-byte ASCII magic, u32 format
version, format-specific header fields, then raw tensors. Helpers here fail
with :class:`CorruptionError` on short reads so truncated files are caught
uniformly.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import CorruptionError, FormatError


def write_magic(fh: BinaryIO, magic: bytes, version: int) -> None:
    if len(magic) != 4:
        raise ValueError("magic must be exactly 4 bytes")
    fh.write(magic)
    write_u32(fh, version)


def read_magic(fh: BinaryIO, magic: bytes) -> int:
    got = fh.read(4)
    if got != magic:
        raise FormatError(f"bad magic: expected {magic!r}, got {got!r}")
    return read_u32(fh)


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CorruptionError(f"unexpected end of file (wanted {n} bytes, got {len(data)})")
    return data


def write_u8(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<B", value))


def read_u8(fh: BinaryIO) -> int:
    return struct.unpack("<B", _read_exact(fh, 1))[0]


def write_u32(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<I", value))


def read_u32(fh: BinaryIO) -> int:
    return struct.unpack("<I", _read_exact(fh, 4))[0]


def write_u64(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<Q", value))


def read_u64(fh: BinaryIO) -> int:
    return struct.unpack("<Q", _read_exact(fh, 8))[0]


def write_f64(fh: BinaryIO, value: float) -> None:
    fh.write(struct.pack("<d", value))


def read_f64(fh: BinaryIO) -> float:
    return struct.unpack("<d", _read_exact(fh, 8))[0]


def write_bytes_block(fh: BinaryIO, payload: bytes) -> None:
    write_u32(fh, len(payload))
    fh.write(payload)


def read_bytes_block(fh: BinaryIO) -> bytes:
    n = read_u32(fh)
    return _read_exact(fh, n)


def write_array(fh: BinaryIO, arr: np.ndarray, dtype: str) -> None:
    """Write an array as a shape header (ndim, dims...) followed by raw data.

    ``dtype`` is the on-disk element type ("<f4" or "<f8"); the array is cast
    if needed.
    """
    write_u32(fh, arr.ndim)
    for dim in arr.shape:
        write_u32(fh, dim)
    fh.write(np.ascontiguousarray(arr, dtype=np.dtype(dtype)).tobytes())


def read_array(fh: BinaryIO, dtype: str) -> np.ndarray:
    ndim = read_u32(fh)
    shape = tuple(read_u32(fh) for _ in range(ndim))
    dt = np.dtype(dtype)
    count = int(np.prod(shape)) if shape else 1
    raw = _read_exact(fh, count * dt.itemsize)
    return np.frombuffer(raw, dtype=dt).reshape(shape).copy()
