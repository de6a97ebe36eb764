"""NDT binary tensor container.

Layout: magic b"NDT1", one dtype byte (1 = float64 LE, 3 = uint32 LE), one
ndim byte, two zero padding bytes, ndim uint64 LE dims, then the row-major
payload. All persistence in this repo goes through this container.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError

MAGIC = b"NDT1"

_DTYPE_CODES = {1: np.dtype("<f8"), 3: np.dtype("<u4")}
_CODE_FOR_KIND = {"f": 1, "u": 3}


def write_ndt(path: str | Path, array: np.ndarray) -> None:
    """Write an array as float64 or uint32 NDT depending on its kind."""
    arr = np.asarray(array)
    if arr.dtype.kind == "f":
        arr = np.ascontiguousarray(arr, dtype="<f8")
        code = 1
    elif arr.dtype.kind in ("u", "i"):
        if arr.dtype.kind == "i" and arr.size and arr.min() < 0:
            raise ShapeError("cannot store negative integers as uint32 NDT")
        arr = np.ascontiguousarray(arr, dtype="<u4")
        code = 3
    else:
        raise ShapeError(f"unsupported dtype for NDT: {arr.dtype}")
    header = MAGIC + struct.pack("<BBxx", code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dims)
        fh.write(arr.tobytes(order="C"))


def read_ndt(path: str | Path) -> np.ndarray:
    """Read an NDT file, validating magic, dtype code, and payload size."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 8:
        raise FormatError(f"{path}: truncated NDT header")
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad NDT magic {blob[:4]!r}")
    code, ndim = blob[4], blob[5]
    if blob[6:8] != b"\x00\x00":
        raise FormatError(f"{path}: nonzero NDT padding bytes")
    if code not in _DTYPE_CODES:
        raise FormatError(f"{path}: unknown NDT dtype code {code}")
    dtype = _DTYPE_CODES[code]
    dims_end = 8 + 8 * ndim
    if len(blob) < dims_end:
        raise FormatError(f"{path}: truncated NDT dims")
    dims = struct.unpack(f"<{ndim}Q", blob[8:dims_end]) if ndim else ()
    count = 1
    for d in dims:
        count *= d
    expected = dims_end + count * dtype.itemsize
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload size {len(blob) - dims_end} does not match dims {dims}"
        )
    arr = np.frombuffer(blob[dims_end:], dtype=dtype).reshape(dims)
    return arr.astype(np.float64) if code == 1 else arr.astype(np.uint32)
