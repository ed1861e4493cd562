"""Binary container primitives shared by every on-disk artifact.

All artifacts (feature tables, PCA models, metrics, classifier banks) live in
the same little-endian container dialect: magic ``MFRG``, a u32 format
version, then a type-specific body built from the primitives below.  Strings
are u32-length-prefixed UTF-8; matrices are u64 row/col counts followed by
row-major float64 payload.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"MFRG"
VERSION = 1


class ContainerError(ValueError):
    """Raised when a binary artifact is malformed or of the wrong type."""


def write_magic(f: BinaryIO, version: int = VERSION) -> None:
    f.write(MAGIC)
    f.write(struct.pack("<I", version))


def read_magic(f: BinaryIO) -> int:
    head = f.read(4)
    if head != MAGIC:
        raise ContainerError(f"bad magic {head!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", _read_exact(f, 4))
    if version > VERSION:
        raise ContainerError(f"unsupported container version {version}")
    return version


def write_u32(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<I", value))


def read_u32(f: BinaryIO) -> int:
    (value,) = struct.unpack("<I", _read_exact(f, 4))
    return value


def write_u64(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<Q", value))


def read_u64(f: BinaryIO) -> int:
    (value,) = struct.unpack("<Q", _read_exact(f, 8))
    return value


def write_f64(f: BinaryIO, value: float) -> None:
    f.write(struct.pack("<d", value))


def read_f64(f: BinaryIO) -> float:
    (value,) = struct.unpack("<d", _read_exact(f, 8))
    return value


def write_str(f: BinaryIO, text: str) -> None:
    data = text.encode("utf-8")
    write_u32(f, len(data))
    f.write(data)


def read_str(f: BinaryIO) -> str:
    length = read_u32(f)
    return _read_exact(f, length).decode("utf-8")


def write_str_list(f: BinaryIO, items: list[str]) -> None:
    write_u32(f, len(items))
    for item in items:
        write_str(f, item)


def read_str_list(f: BinaryIO) -> list[str]:
    count = read_u32(f)
    return [read_str(f) for _ in range(count)]


def write_matrix(f: BinaryIO, matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    if matrix.ndim == 1:
        matrix = matrix.reshape(1, -1)
    if matrix.ndim != 2:
        raise ContainerError(f"expected 1-D or 2-D array, got ndim={matrix.ndim}")
    write_u64(f, matrix.shape[0])
    write_u64(f, matrix.shape[1])
    f.write(matrix.tobytes())


def read_matrix(f: BinaryIO) -> np.ndarray:
    rows = read_u64(f)
    cols = read_u64(f)
    payload = _read_exact(f, rows * cols * 8)
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()


def _read_exact(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise ContainerError(f"truncated file: wanted {n} bytes, got {len(data)}")
    return data


def at_eof(f: BinaryIO) -> bool:
    pos = f.tell()
    probe = f.read(1)
    if probe:
        f.seek(pos)
        return False
    return True
