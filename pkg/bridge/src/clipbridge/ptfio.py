"""Minimal writer for the PTF tensor container.

Layout: magic "SPCL" | version u32=1 | dtype u32 | ndim u32 | ndim x u32
extents | row-major little-endian payload. The bridge only emits float32
(dtype code 0).
"""

import struct

import numpy as np

MAGIC = b"SPCL"
VERSION = 1
DTYPE_F32 = 0


def write_ptf(tensor: np.ndarray, path) -> None:
    arr = np.ascontiguousarray(np.asarray(tensor, dtype=np.float32))
    header = MAGIC + struct.pack("<3I", VERSION, DTYPE_F32, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(arr.astype("<f4").tobytes())
