"""P6 binary PPM export/import.

Export quantizes with round-half-up (floor(x * 255 + 0.5)) clamped to
[0, 255] so identical pixels always produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError
from .numcore import require_finite


def export_ppm(img: np.ndarray, path: str | Path) -> None:
    """Write a 3 x H x W image with values in [0, 1] as binary PPM."""
    img = require_finite(img, "image")
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"export_ppm expects 3 x H x W, got {img.shape}")
    _, h, w = img.shape
    bytes_ = np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)
    # channel-first -> interleaved rows
    payload = bytes_.transpose(1, 2, 0).tobytes()
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(payload)


def _read_token(blob: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(blob):
        if blob[pos : pos + 1].isspace():
            pos += 1
        elif blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < len(blob) and not blob[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("truncated PPM header")
    return blob[start:pos], pos


def import_ppm(path: str | Path) -> np.ndarray:
    """Read a binary PPM into a float64 3 x H x W array of values in [0, 1]."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[:2] != b"P6":
        raise FormatError(f"{path}: not a P6 PPM (magic {blob[:2]!r})")
    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _read_token(blob, pos)
        try:
            fields.append(int(token))
        except ValueError as exc:
            raise FormatError(f"{path}: bad PPM header token {token!r}") from exc
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace after maxval
    expected = w * h * 3
    payload = blob[pos : pos + expected]
    if len(payload) != expected:
        raise FormatError(f"{path}: PPM payload truncated")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0
