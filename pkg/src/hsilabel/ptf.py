"""Portable tensor file (PTF) serialization.

Bit-exact interchange format for cubes, score maps and label maps:

    magic "SPCL" | version u32 | dtype u32 | ndim u32 | ndim x u32 extents | payload

All integers and payload elements are little-endian; payload is row-major
(C order, last index fastest).
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"SPCL"
VERSION = 1

DTYPE_F32 = 0
DTYPE_U16 = 1

#: Sentinel for unlabeled pixels in u16 label maps.
IGNORE = 0xFFFF

_CODE_TO_NP = {DTYPE_F32: np.dtype("<f4"), DTYPE_U16: np.dtype("<u2")}
_NP_TO_CODE = {np.dtype(np.float32): DTYPE_F32, np.dtype(np.uint16): DTYPE_U16}

_MAX_EXTENT = 2**32 - 1


class PtfError(Exception):
    """Base class for PTF format errors."""


class BadMagicError(PtfError):
    pass


class UnknownVersionError(PtfError):
    pass


class UnknownDtypeError(PtfError):
    pass


class TruncatedPayloadError(PtfError):
    pass


def write_ptf(tensor: np.ndarray, sink: BinaryIO) -> None:
    """Write a float32 or uint16 array to ``sink`` in PTF format.

    Output bytes are a pure function of the array contents.
    """
    arr = np.ascontiguousarray(tensor)
    if arr.dtype not in _NP_TO_CODE:
        raise UnknownDtypeError(f"unsupported dtype {arr.dtype}; use float32 or uint16")
    for ext in arr.shape:
        if ext > _MAX_EXTENT:
            raise PtfError(f"extent {ext} overflows 32-bit limit")
    code = _NP_TO_CODE[arr.dtype]
    sink.write(MAGIC)
    sink.write(struct.pack("<III", VERSION, code, arr.ndim))
    sink.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    sink.write(arr.astype(_CODE_TO_NP[code], copy=False).tobytes(order="C"))


def read_ptf(source: BinaryIO) -> np.ndarray:
    """Read a PTF stream back into an array; inverse of :func:`write_ptf`."""
    magic = source.read(4)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    head = source.read(12)
    if len(head) != 12:
        raise TruncatedPayloadError("truncated header")
    version, code, ndim = struct.unpack("<III", head)
    if version != VERSION:
        raise UnknownVersionError(f"unknown version {version}")
    if code not in _CODE_TO_NP:
        raise UnknownDtypeError(f"unknown dtype code {code}")
    raw_dims = source.read(4 * ndim)
    if len(raw_dims) != 4 * ndim:
        raise TruncatedPayloadError("truncated dims")
    dims = struct.unpack(f"<{ndim}I", raw_dims)
    dtype = _CODE_TO_NP[code]
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    payload = source.read(count * dtype.itemsize)
    if len(payload) != count * dtype.itemsize:
        raise TruncatedPayloadError(
            f"payload holds {len(payload)} bytes, header declares {count * dtype.itemsize}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def save_ptf(tensor: np.ndarray, path) -> None:
    with open(path, "wb") as f:
        write_ptf(tensor, f)


def load_ptf(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_ptf(f)
