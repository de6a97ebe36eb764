"""Multi-resolution image parameterization and rendering.

A synthetic image is stored as a stack of levels at doubling resolutions.
Rendering upsamples every active level to the max resolution, averages them,
applies a fixed per-pixel color matrix, and squashes through a sigmoid.
Normalization lives in the render (division by the active-level count), so
activating a level never rewrites stored values.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError
from .ndt import read_ndt, write_ndt
from .numcore import require_finite
from .resample import bilinear_resize, bilinear_resize_vjp
from .rng import RngStream


def _ladder(max_resolution: int) -> list[int]:
    if max_resolution < 1 or max_resolution & (max_resolution - 1):
        raise ShapeError(f"max resolution must be a power of two, got {max_resolution}")
    res, r = [], 1
    while r <= max_resolution:
        res.append(r)
        r *= 2
    return res


@dataclass
class PyramidImage:
    """Stack of 3 x r x r levels; only the first active_count levels render."""

    levels: list[np.ndarray]
    active_count: int

    def __post_init__(self):
        if not self.levels:
            raise ShapeError("pyramid needs at least one level")
        res = [lev.shape[-1] for lev in self.levels]
        for lev, r in zip(self.levels, res):
            if lev.shape != (3, r, r):
                raise ShapeError(f"pyramid level must be 3 x r x r, got {lev.shape}")
        ladder_ok = res == _ladder(res[-1])
        single_ok = len(res) == 1  # no-pyramid ablation: one full-res level
        if not (ladder_ok or single_ok):
            raise ShapeError(f"level resolutions {res} are not a doubling ladder")
        if not 1 <= self.active_count <= len(self.levels):
            raise ShapeError(
                f"active_count {self.active_count} outside [1, {len(self.levels)}]"
            )

    @property
    def resolutions(self) -> list[int]:
        return [lev.shape[-1] for lev in self.levels]

    @property
    def max_resolution(self) -> int:
        return self.levels[-1].shape[-1]


@dataclass
class ColorTransform:
    """Fixed 3x3 matrix applied to each pixel's channel vector."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = require_finite(self.matrix, "color matrix")
        if self.matrix.shape != (3, 3):
            raise ShapeError(f"color matrix must be 3x3, got {self.matrix.shape}")
        sv = np.linalg.svd(self.matrix, compute_uv=False)
        if sv[-1] == 0.0 or sv[0] / sv[-1] >= 1e6:
            raise ShapeError("color matrix is singular or badly conditioned")

    @classmethod
    def identity(cls) -> "ColorTransform":
        return cls(np.eye(3))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def init_pyramid(stream: RngStream, max_resolution: int,
                 single_level: bool = False) -> PyramidImage:
    """Fresh pyramid with all levels drawn i.i.d. standard normal."""
    res = [max_resolution] if single_level else _ladder(max_resolution)
    levels = [stream.normal((3, r, r)) for r in res]
    return PyramidImage(levels=levels, active_count=1)


def activate_next_level(p: PyramidImage) -> PyramidImage:
    """Enable the next level; no-op at the cap. Stored values are untouched."""
    return PyramidImage(levels=p.levels,
                        active_count=min(p.active_count + 1, len(p.levels)))


def render(p: PyramidImage, ct: ColorTransform, scale: float = 1.0) -> np.ndarray:
    """Composite the active levels into a 3 x R x R image with values in (0, 1)."""
    r_max = p.max_resolution
    composite = np.zeros((3, r_max, r_max), dtype=np.float64)
    for lev in p.levels[: p.active_count]:
        composite += bilinear_resize(lev, r_max, r_max)
    composite /= p.active_count
    rgb = np.einsum("ab,bhw->ahw", ct.matrix, composite)
    out = _sigmoid(scale * rgb)
    # float64 saturates to exactly 0/1 for |x| > ~37; keep the open interval
    return np.clip(out, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def render_vjp(p: PyramidImage, ct: ColorTransform, upstream: np.ndarray,
               scale: float = 1.0) -> list[np.ndarray]:
    """Gradient of render w.r.t. each level; inactive levels get exact zeros."""
    upstream = require_finite(upstream, "upstream")
    r_max = p.max_resolution
    if upstream.shape != (3, r_max, r_max):
        raise ShapeError(f"upstream shape {upstream.shape} != (3, {r_max}, {r_max})")
    out = render(p, ct, scale)
    d_pre = upstream * scale * out * (1.0 - out)
    d_comp = np.einsum("ba,bhw->ahw", ct.matrix, d_pre) / p.active_count
    grads = []
    for i, lev in enumerate(p.levels):
        r = lev.shape[-1]
        if i < p.active_count:
            grads.append(bilinear_resize_vjp(d_comp, r, r))
        else:
            grads.append(np.zeros_like(lev))
    return grads


def color_matrix_from_dataset(images: np.ndarray) -> ColorTransform:
    """Cholesky factor of the 3x3 channel covariance of real images.

    Parameters then live in whitened space and the factor maps them back to
    correlated RGB. Near-singular covariance falls back to identity.
    """
    images = require_finite(np.asarray(images, dtype=np.float64), "images")
    if images.ndim != 4 or images.shape[1] != 3:
        raise ShapeError(f"expected N x 3 x H x W images, got {images.shape}")
    channels = images.transpose(1, 0, 2, 3).reshape(3, -1)
    cov = np.cov(channels)
    eig = np.linalg.eigvalsh(cov)
    if eig[0] <= 0 or eig[0] / eig[-1] < 1e-10:
        return ColorTransform.identity()
    return ColorTransform(np.linalg.cholesky(cov))


def save_pyramid(out_dir: str | Path, p: PyramidImage, iteration: int) -> None:
    """Checkpoint: one NDT per level plus a manifest text file."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, lev in enumerate(p.levels):
        write_ndt(out_dir / f"level_{i:02d}.ndt", lev)
    lines = [
        "resolutions=" + ",".join(str(r) for r in p.resolutions),
        f"active_count={p.active_count}",
        f"iteration={iteration}",
    ]
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_pyramid(in_dir: str | Path) -> tuple[PyramidImage, int]:
    in_dir = Path(in_dir)
    manifest = in_dir / "manifest.txt"
    if not manifest.exists():
        raise FormatError(f"{manifest}: missing pyramid manifest")
    fields = {}
    for line in manifest.read_text().splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
    try:
        res = [int(r) for r in fields["resolutions"].split(",")]
        active = int(fields["active_count"])
        iteration = int(fields["iteration"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{manifest}: malformed pyramid manifest") from exc
    levels = [read_ndt(in_dir / f"level_{i:02d}.ndt") for i in range(len(res))]
    for lev, r in zip(levels, res):
        if lev.shape != (3, r, r):
            raise FormatError(f"{in_dir}: level shape {lev.shape} != manifest {r}")
    return PyramidImage(levels=levels, active_count=active), iteration
