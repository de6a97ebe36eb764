"""Bilinear resampling and its exact adjoint.

Sampling uses half-pixel centers: source coordinate s = (d + 0.5) * in/out
- 0.5, clamped to [0, in-1]. Each axis is a small dense interpolation matrix,
so the adjoint is literally the transpose and the adjoint identity holds to
machine precision.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import ShapeError
from .numcore import require_finite


@lru_cache(maxsize=256)
def _axis_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out x n_in) bilinear interpolation matrix for one axis."""
    if n_in < 1 or n_out < 1:
        raise ShapeError("resize sizes must be >= 1")
    d = np.arange(n_out, dtype=np.float64)
    s = np.clip((d + 0.5) * (n_in / n_out) - 0.5, 0.0, n_in - 1)
    i0 = np.floor(s).astype(np.int64)
    i0 = np.minimum(i0, n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = s - i0
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(mat, (rows, i0), 1.0 - frac)
    np.add.at(mat, (rows, i1), frac)
    return mat


def axis_matrix(n_in: int, n_out: int) -> np.ndarray:
    return _axis_matrix(n_in, n_out)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a C x h x w image to C x out_h x out_w."""
    img = require_finite(img, "image")
    if img.ndim != 3:
        raise ShapeError(f"bilinear_resize expects C x h x w, got {img.shape}")
    _, h, w = img.shape
    a_h = _axis_matrix(h, out_h)
    a_w = _axis_matrix(w, out_w)
    # rows then columns; separable so order does not matter
    return np.einsum("oi,cij,pj->cop", a_h, img, a_w, optimize=True)


def bilinear_resize_vjp(upstream: np.ndarray, h: int, w: int) -> np.ndarray:
    """Exact transpose of bilinear_resize back to the C x h x w input."""
    upstream = require_finite(upstream, "upstream")
    if upstream.ndim != 3:
        raise ShapeError(f"vjp upstream must be C x H x W, got {upstream.shape}")
    _, out_h, out_w = upstream.shape
    a_h = _axis_matrix(h, out_h)
    a_w = _axis_matrix(w, out_w)
    return np.einsum("oi,cop,pj->cij", a_h, upstream, a_w, optimize=True)


def resize_batch(imgs: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize N x C x h x w in one shot."""
    imgs = require_finite(imgs, "images")
    if imgs.ndim != 4:
        raise ShapeError(f"resize_batch expects N x C x h x w, got {imgs.shape}")
    a_h = _axis_matrix(imgs.shape[2], out_h)
    a_w = _axis_matrix(imgs.shape[3], out_w)
    return np.einsum("oi,ncij,pj->ncop", a_h, imgs, a_w, optimize=True)
