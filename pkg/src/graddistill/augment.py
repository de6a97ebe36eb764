"""Differentiable train-time augmentations with replayable parameters.

Order is flip, then crop + bilinear resize to the target size, then additive
Gaussian noise. With parameters fixed the whole transform is linear in the
input pixels up to the noise constant, and the VJP is its exact adjoint.
Vector inputs take the noise-only path (flip/crop are pixel-space notions).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numcore import require_finite
from .resample import axis_matrix
from .rng import RngStream

_CROP_RETRIES = 10


def _words_for_normal(n: int) -> int:
    return 2 * ((n + 1) // 2)


@dataclass
class AugmentConfig:
    """Sampling ranges and per-transform switches."""

    flip_prob: float = 0.5
    area_range: tuple[float, float] = (0.08, 1.0)
    aspect_range: tuple[float, float] = (3.0 / 4.0, 4.0 / 3.0)
    sigma: float = 0.2
    rounds: int = 1
    out_size: tuple[int, int] = (224, 224)
    flip_enabled: bool = True
    crop_enabled: bool = True
    noise_enabled: bool = True

    def __post_init__(self):
        if self.rounds < 1:
            raise ShapeError("augment rounds must be >= 1")
        if self.sigma < 0:
            raise ShapeError("noise sigma must be >= 0")
        if not (0 < self.area_range[0] <= self.area_range[1] <= 1.0):
            raise ShapeError(f"bad crop area range {self.area_range}")
        if not (0 < self.aspect_range[0] <= self.aspect_range[1]):
            raise ShapeError(f"bad crop aspect range {self.aspect_range}")

    @classmethod
    def disabled(cls, out_size=None) -> "AugmentConfig":
        return cls(flip_enabled=False, crop_enabled=False, noise_enabled=False,
                   sigma=0.0, out_size=out_size or (224, 224))


@dataclass
class AugmentationParams:
    """One replayable draw: flip decision, crop box, and a noise stream ref."""

    src_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    flip: bool = False
    crop: tuple[int, int, int, int] | None = None  # top, left, height, width
    sigma: float = 0.0
    noise_ref: tuple[int, int, int] | None = None  # seed, stream_id, counter

    def __post_init__(self):
        if self.crop is not None:
            top, left, h, w = self.crop
            src_h, src_w = self.src_shape[-2], self.src_shape[-1]
            if h < 1 or w < 1 or top < 0 or left < 0 or top + h > src_h or left + w > src_w:
                raise ShapeError(f"crop box {self.crop} outside source {self.src_shape}")
        if self.sigma < 0:
            raise ShapeError("noise sigma must be >= 0")

    def to_line(self) -> str:
        crop = ",".join(map(str, self.crop)) if self.crop else "-"
        noise = ":".join(map(str, self.noise_ref)) if self.noise_ref else "-"
        src = "x".join(map(str, self.src_shape))
        out = "x".join(map(str, self.out_shape))
        return f"src={src} out={out} flip={int(self.flip)} crop={crop} sigma={self.sigma!r} noise={noise}"

    @classmethod
    def from_line(cls, line: str) -> "AugmentationParams":
        fields = dict(part.split("=", 1) for part in line.split())
        crop = fields["crop"]
        noise = fields["noise"]
        return cls(
            src_shape=tuple(int(v) for v in fields["src"].split("x")),
            out_shape=tuple(int(v) for v in fields["out"].split("x")),
            flip=bool(int(fields["flip"])),
            crop=None if crop == "-" else tuple(int(v) for v in crop.split(",")),
            sigma=float(fields["sigma"]),
            noise_ref=None if noise == "-" else tuple(int(v) for v in noise.split(":")),
        )

    def replay_noise(self) -> np.ndarray | None:
        if self.noise_ref is None or self.sigma == 0.0:
            return None
        seed, stream_id, counter = self.noise_ref
        return RngStream(seed, stream_id, counter).normal(self.out_shape)


def sample_params(stream: RngStream, cfg: AugmentConfig, src_h: int,
                  src_w: int) -> AugmentationParams:
    """Draw flip/crop/noise parameters for one image."""
    flip = cfg.flip_enabled and stream.uniform() < cfg.flip_prob
    crop = None
    if cfg.crop_enabled:
        crop = _sample_crop(stream, cfg, src_h, src_w)
    out_shape = (3,) + tuple(cfg.out_size)
    sigma, ref = 0.0, None
    if cfg.noise_enabled and cfg.sigma > 0:
        sigma = cfg.sigma
        ref = (stream.seed, stream.stream_id, stream.counter)
        stream.counter += _words_for_normal(int(np.prod(out_shape)))
    return AugmentationParams(src_shape=(3, src_h, src_w), out_shape=out_shape,
                              flip=flip, crop=crop, sigma=sigma, noise_ref=ref)


def sample_params_vector(stream: RngStream, cfg: AugmentConfig,
                         dim: int) -> AugmentationParams:
    """Noise-only draw for vector inputs."""
    sigma, ref = 0.0, None
    if cfg.noise_enabled and cfg.sigma > 0:
        sigma = cfg.sigma
        ref = (stream.seed, stream.stream_id, stream.counter)
        stream.counter += _words_for_normal(dim)
    return AugmentationParams(src_shape=(dim,), out_shape=(dim,),
                              sigma=sigma, noise_ref=ref)


def _sample_crop(stream, cfg, src_h, src_w):
    area = src_h * src_w
    lo, hi = cfg.area_range
    log_lo, log_hi = math.log(cfg.aspect_range[0]), math.log(cfg.aspect_range[1])
    for _ in range(_CROP_RETRIES):
        frac = lo + stream.uniform() * (hi - lo)
        aspect = math.exp(log_lo + stream.uniform() * (log_hi - log_lo))
        w = int(round(math.sqrt(area * frac * aspect)))
        h = int(round(math.sqrt(area * frac / aspect)))
        if 1 <= w <= src_w and 1 <= h <= src_h:
            top = stream.randint(src_h - h + 1)
            left = stream.randint(src_w - w + 1)
            return (top, left, h, w)
    return (0, 0, src_h, src_w)  # fallback: full box


def apply(img: np.ndarray, params: AugmentationParams) -> np.ndarray:
    """Flip, crop + resize, add noise. Linear in img for fixed params."""
    img = require_finite(img, "image")
    if img.shape != params.src_shape:
        raise ShapeError(f"image shape {img.shape} != params source {params.src_shape}")
    if img.ndim == 1:
        out = img.copy()
    elif img.ndim == 3:
        x = img[:, :, ::-1] if params.flip else img
        top, left, h, w = params.crop if params.crop else (0, 0, x.shape[1], x.shape[2])
        box = x[:, top : top + h, left : left + w]
        out_h, out_w = params.out_shape[-2], params.out_shape[-1]
        a_h, a_w = axis_matrix(h, out_h), axis_matrix(w, out_w)
        out = np.einsum("oi,cij,pj->cop", a_h, box, a_w, optimize=True)
    else:
        raise ShapeError(f"apply expects a vector or 3 x h x w image, got {img.shape}")
    noise = params.replay_noise()
    if noise is not None:
        out = out + params.sigma * noise
    return out


def apply_vjp(params: AugmentationParams, upstream: np.ndarray) -> np.ndarray:
    """Exact adjoint of the linear part of apply; noise contributes nothing."""
    upstream = require_finite(upstream, "upstream")
    if upstream.shape != params.out_shape:
        raise ShapeError(f"upstream shape {upstream.shape} != params out {params.out_shape}")
    if len(params.src_shape) == 1:
        return upstream.copy()
    src_h, src_w = params.src_shape[-2], params.src_shape[-1]
    top, left, h, w = params.crop if params.crop else (0, 0, src_h, src_w)
    a_h = axis_matrix(h, upstream.shape[-2])
    a_w = axis_matrix(w, upstream.shape[-1])
    box_grad = np.einsum("oi,cop,pj->cij", a_h, upstream, a_w, optimize=True)
    grad = np.zeros(params.src_shape, dtype=np.float64)
    grad[:, top : top + h, left : left + w] = box_grad
    return grad[:, :, ::-1].copy() if params.flip else grad


def expand_batch(inputs: np.ndarray, cfg: AugmentConfig,
                 stream: RngStream) -> tuple[np.ndarray, list[AugmentationParams]]:
    """k independent augmented copies per input, round-major ordering.

    Output row r*n + i is round r of input i; labels replicate the same way.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim not in (2, 4):
        raise ShapeError(f"expand_batch expects N x d or N x 3 x h x w, got {inputs.shape}")
    n = inputs.shape[0]
    rows, params_list = [], []
    for _ in range(cfg.rounds):
        for i in range(n):
            if inputs.ndim == 2:
                params = sample_params_vector(stream, cfg, inputs.shape[1])
            else:
                params = sample_params(stream, cfg, inputs.shape[2], inputs.shape[3])
            params_list.append(params)
            rows.append(apply(inputs[i], params))
    return np.stack(rows), params_list
