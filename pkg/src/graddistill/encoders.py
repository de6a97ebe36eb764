"""Frozen feature extractors and the embedding interchange format.

Encoders are immutable after construction: weights are drawn once from a
seeded stream (or loaded from disk) and never change. Each provides forward
and the exact input-side vector-Jacobian product; weight gradients are never
computed. Nonlinearities are tanh so finite-difference checks stay clean.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError, FormatError, ShapeError
from .ndt import read_ndt, write_ndt
from .numcore import require_finite
from .rng import RngStream


@dataclass
class EmbeddingTable:
    """n x f feature matrix with per-row integer labels."""

    features: np.ndarray
    labels: np.ndarray
    names: list[str] | None = None

    def __post_init__(self):
        self.features = require_finite(self.features, "features")
        self.labels = np.asarray(self.labels)
        if self.features.ndim != 2:
            raise ShapeError(f"features must be n x f, got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeError(
                f"labels count {self.labels.shape} != feature rows {self.features.shape[0]}"
            )

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0


def save_embeddings(out_dir: str | Path, table: EmbeddingTable) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_ndt(out_dir / "features.ndt", table.features)
    write_ndt(out_dir / "labels.ndt", table.labels.astype(np.uint32))
    if table.names is not None:
        (out_dir / "names.txt").write_text("\n".join(table.names) + "\n")


def load_embeddings(in_dir: str | Path) -> EmbeddingTable:
    in_dir = Path(in_dir)
    features = read_ndt(in_dir / "features.ndt")
    labels = read_ndt(in_dir / "labels.ndt")
    if features.ndim != 2:
        raise FormatError(f"{in_dir}/features.ndt: expected 2-d array, got {features.ndim}-d")
    if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
        raise FormatError(
            f"{in_dir}: labels dims {labels.shape} do not match features rows "
            f"{features.shape[0]}"
        )
    names_path = in_dir / "names.txt"
    names = names_path.read_text().splitlines() if names_path.exists() else None
    return EmbeddingTable(features=features, labels=labels, names=names)


class Encoder:
    """Frozen differentiable map from inputs to f-dimensional features."""

    architecture: str
    feature_dim: int
    input_kind: str  # "vector" or "image"

    def forward(self, batch: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def vjp(self, batch: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def parameters(self) -> dict[str, np.ndarray]:
        return {}

    def _check_batch(self, batch: np.ndarray) -> np.ndarray:
        batch = require_finite(batch, "batch")
        if self.input_kind == "vector" and batch.ndim != 2:
            raise ShapeError(f"{self.architecture} expects N x d, got {batch.shape}")
        if self.input_kind == "image" and (batch.ndim != 4 or batch.shape[1] != 3):
            raise ShapeError(f"{self.architecture} expects N x 3 x H x W, got {batch.shape}")
        return batch


class IdentityEncoder(Encoder):
    architecture = "identity"
    input_kind = "vector"

    def __init__(self, dim: int):
        self.feature_dim = dim

    def forward(self, batch):
        batch = self._check_batch(batch)
        if batch.shape[1] != self.feature_dim:
            raise ShapeError(f"identity encoder dim {self.feature_dim} != input {batch.shape[1]}")
        return batch.copy()

    def vjp(self, batch, upstream):
        return np.asarray(upstream, dtype=np.float64).copy()


class RandomProjectionEncoder(Encoder):
    architecture = "random_projection"
    input_kind = "vector"

    def __init__(self, input_dim: int, feature_dim: int,
                 stream: RngStream | None = None, weights=None):
        self.input_dim = input_dim
        self.feature_dim = feature_dim
        if weights is not None:
            self.w = np.asarray(weights["w"], dtype=np.float64)
        else:
            self.w = stream.normal((feature_dim, input_dim)) / np.sqrt(input_dim)

    def forward(self, batch):
        batch = self._check_batch(batch)
        return batch @ self.w.T

    def vjp(self, batch, upstream):
        return np.asarray(upstream, dtype=np.float64) @ self.w

    def parameters(self):
        return {"w": self.w}


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)  # relu: piecewise-linear option


def _activate_grad(z: np.ndarray, activated: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - activated * activated
    return (z > 0.0).astype(np.float64)


def _check_activation(kind: str) -> str:
    if kind not in ("tanh", "relu"):
        raise ShapeError(f"unknown activation {kind!r}")
    return kind


class MlpEncoder(Encoder):
    architecture = "mlp"
    input_kind = "vector"

    def __init__(self, input_dim: int, hidden_dim: int, feature_dim: int,
                 stream: RngStream | None = None, weights=None,
                 activation: str = "tanh"):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.feature_dim = feature_dim
        self.activation = _check_activation(activation)
        if weights is not None:
            self.w1 = np.asarray(weights["w1"], dtype=np.float64)
            self.b1 = np.asarray(weights["b1"], dtype=np.float64)
            self.w2 = np.asarray(weights["w2"], dtype=np.float64)
            self.b2 = np.asarray(weights["b2"], dtype=np.float64)
        else:
            self.w1 = stream.normal((hidden_dim, input_dim)) / np.sqrt(input_dim)
            self.b1 = np.zeros(hidden_dim)
            self.w2 = stream.normal((feature_dim, hidden_dim)) / np.sqrt(hidden_dim)
            self.b2 = np.zeros(feature_dim)

    def forward(self, batch):
        batch = self._check_batch(batch)
        hidden = _activate(batch @ self.w1.T + self.b1, self.activation)
        return hidden @ self.w2.T + self.b2

    def vjp(self, batch, upstream):
        batch = self._check_batch(batch)
        upstream = np.asarray(upstream, dtype=np.float64)
        pre = batch @ self.w1.T + self.b1
        hidden = _activate(pre, self.activation)
        d_hidden = (upstream @ self.w2) * _activate_grad(pre, hidden, self.activation)
        return d_hidden @ self.w1

    def parameters(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def _conv3x3(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Same-padded 3x3 correlation: N x C x H x W -> N x O x H x W."""
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(2, 3))
    return np.einsum("nchwij,ocij->nohw", windows, kernel, optimize=True)


def _conv3x3_input_grad(d_out: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Adjoint of _conv3x3 w.r.t. its input (flipped-kernel correlation)."""
    flipped = kernel[:, :, ::-1, ::-1]
    padded = np.pad(d_out, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(2, 3))
    return np.einsum("nohwij,ocij->nchw", windows, flipped, optimize=True)


def _avgpool2(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def _avgpool2_grad(d_out: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(d_out, 2, axis=2), 2, axis=3) / 4.0


class ConvSmallEncoder(Encoder):
    """Two 3x3 conv + average-pool stages, global average, linear head."""

    architecture = "conv_small"
    input_kind = "image"

    def __init__(self, feature_dim: int, stream: RngStream | None = None,
                 channels1: int = 16, channels2: int = 32, weights=None,
                 activation: str = "tanh"):
        self.feature_dim = feature_dim
        self.channels1 = channels1
        self.channels2 = channels2
        self.activation = _check_activation(activation)
        if weights is not None:
            self.k1 = np.asarray(weights["k1"], dtype=np.float64)
            self.b1 = np.asarray(weights["b1"], dtype=np.float64)
            self.k2 = np.asarray(weights["k2"], dtype=np.float64)
            self.b2 = np.asarray(weights["b2"], dtype=np.float64)
            self.w = np.asarray(weights["w"], dtype=np.float64)
            self.b = np.asarray(weights["b"], dtype=np.float64)
            self.channels1 = self.k1.shape[0]
            self.channels2 = self.k2.shape[0]
        else:
            self.k1 = stream.normal((channels1, 3, 3, 3)) / np.sqrt(27.0)
            self.b1 = np.zeros(channels1)
            self.k2 = stream.normal((channels2, channels1, 3, 3)) / np.sqrt(9.0 * channels1)
            self.b2 = np.zeros(channels2)
            self.w = stream.normal((feature_dim, channels2)) / np.sqrt(channels2)
            self.b = np.zeros(feature_dim)

    def _stages(self, batch):
        z1 = _conv3x3(batch, self.k1) + self.b1[None, :, None, None]
        a1 = _activate(z1, self.activation)
        p1 = _avgpool2(a1)
        z2 = _conv3x3(p1, self.k2) + self.b2[None, :, None, None]
        a2 = _activate(z2, self.activation)
        p2 = _avgpool2(a2)
        pooled = p2.mean(axis=(2, 3))
        return z1, a1, p1, z2, a2, p2, pooled

    def forward(self, batch):
        batch = self._check_batch(batch)
        if batch.shape[2] % 4 or batch.shape[3] % 4:
            raise ShapeError(f"conv_small needs H, W divisible by 4, got {batch.shape}")
        return self._stages(batch)[-1] @ self.w.T + self.b

    def vjp(self, batch, upstream):
        batch = self._check_batch(batch)
        upstream = np.asarray(upstream, dtype=np.float64)
        z1, a1, p1, z2, a2, p2, _ = self._stages(batch)
        d_pooled = upstream @ self.w
        d_p2 = np.broadcast_to(
            d_pooled[:, :, None, None] / (p2.shape[2] * p2.shape[3]), p2.shape
        )
        d_a2 = _avgpool2_grad(d_p2)
        d_z2 = d_a2 * _activate_grad(z2, a2, self.activation)
        d_p1 = _conv3x3_input_grad(d_z2, self.k2)
        d_a1 = _avgpool2_grad(d_p1)
        d_z1 = d_a1 * _activate_grad(z1, a1, self.activation)
        return _conv3x3_input_grad(d_z1, self.k1)

    def parameters(self):
        return {"k1": self.k1, "b1": self.b1, "k2": self.k2, "b2": self.b2,
                "w": self.w, "b": self.b}


def embed_dataset(encoder: Encoder, inputs: np.ndarray, labels,
                  batch_size: int = 256,
                  names: list[str] | None = None) -> EmbeddingTable:
    """Encode a whole dataset, rows in dataset order."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape[0] == 0:
        raise DatasetError("cannot embed an empty dataset")
    chunks = [encoder.forward(inputs[i : i + batch_size])
              for i in range(0, inputs.shape[0], batch_size)]
    return EmbeddingTable(features=np.concatenate(chunks), labels=np.asarray(labels),
                          names=names)


_BUILDERS = {
    "identity": lambda dims, w, act: IdentityEncoder(dims["feature_dim"]),
    "random_projection": lambda dims, w, act: RandomProjectionEncoder(
        dims["input_dim"], dims["feature_dim"], weights=w),
    "mlp": lambda dims, w, act: MlpEncoder(
        dims["input_dim"], dims["hidden_dim"], dims["feature_dim"], weights=w,
        activation=act),
    "conv_small": lambda dims, w, act: ConvSmallEncoder(
        dims["feature_dim"], weights=w, activation=act),
}


def save_encoder(out_dir: str | Path, encoder: Encoder, extra: dict | None = None) -> None:
    """NDT file per parameter plus a text manifest naming the architecture."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = encoder.parameters()
    lines = [f"architecture={encoder.architecture}",
             f"feature_dim={encoder.feature_dim}",
             f"input_kind={encoder.input_kind}"]
    for attr in ("input_dim", "hidden_dim", "activation"):
        if hasattr(encoder, attr):
            lines.append(f"{attr}={getattr(encoder, attr)}")
    for name, value in params.items():
        lines.append(f"param.{name}={'x'.join(map(str, value.shape))}")
        write_ndt(out_dir / f"param_{name}.ndt", value)
    for key, value in (extra or {}).items():
        lines.append(f"{key}={value}")
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_encoder(in_dir: str | Path) -> Encoder:
    in_dir = Path(in_dir)
    manifest = in_dir / "manifest.txt"
    if not manifest.exists():
        raise FormatError(f"{manifest}: missing encoder manifest")
    fields, params = {}, {}
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        if key.startswith("param."):
            name = key[len("param.") :]
            params[name] = read_ndt(in_dir / f"param_{name}.ndt")
            expected = tuple(int(v) for v in value.split("x")) if value else ()
            if params[name].shape != expected:
                raise FormatError(f"{in_dir}: param {name} shape {params[name].shape} "
                                  f"!= manifest {expected}")
        else:
            fields[key] = value
    arch = fields.get("architecture")
    if arch not in _BUILDERS:
        raise FormatError(f"{manifest}: unknown architecture {arch!r}")
    dims = {key: int(fields[key]) for key in ("feature_dim", "input_dim", "hidden_dim")
            if key in fields}
    return _BUILDERS[arch](dims, params or None, fields.get("activation", "tanh"))
