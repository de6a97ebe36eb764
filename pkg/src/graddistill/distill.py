"""Gradient-matching distillation of a dataset to one synthetic sample per class.

Each step samples a fresh random linear head, computes the cross-entropy
gradients it receives from the (augmented) synthetic batch and from a real
batch of equal size, and descends the cosine distance between the two
vectorized gradients. The derivative of that objective with respect to the
synthetic features is computed in closed form and chained by hand through
the encoder, the augmentations, and the image parameterization.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import (AugmentConfig, apply, apply_vjp, sample_params,
                      sample_params_vector)
from .encoders import Encoder
from .errors import DegenerateGradientError, LabelError, ShapeError
from .ndt import write_ndt
from .numcore import AdamState, adam_step, cross_entropy, require_finite, softmax
from .ppm import export_ppm
from .pyramid import (ColorTransform, PyramidImage, activate_next_level,
                      color_matrix_from_dataset, init_pyramid, render, render_vjp,
                      save_pyramid)
from .resample import bilinear_resize_vjp, resize_batch
from .rng import RngStream, stream_for

METRIC_FIELDS = ("iteration", "meta_loss", "ell_real", "ell_syn",
                 "grad_norm_syn", "grad_norm_real", "active_levels")


@dataclass
class LinearHead:
    """Weight matrix (c x f) and bias (c); the only trainable probe object."""

    w: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.w = require_finite(self.w, "head weights")
        self.b = require_finite(self.b, "head bias")
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[0],):
            raise ShapeError(f"inconsistent head shapes {self.w.shape}, {self.b.shape}")

    def logits(self, z: np.ndarray) -> np.ndarray:
        return z @ self.w.T + self.b


@dataclass
class GradientPair:
    """Classifier gradients (d loss / dW, d loss / db) for one batch."""

    g_w: np.ndarray
    g_b: np.ndarray

    def vectorize(self, include_bias: bool = True) -> np.ndarray:
        if include_bias:
            return np.concatenate([self.g_w.ravel(), self.g_b.ravel()])
        return self.g_w.ravel()


def sample_head(stream: RngStream, n_classes: int, feature_dim: int,
                mode: str = "fanin") -> LinearHead:
    """Random head; "normal" is N(0,1) with zero bias, "fanin" is the
    standard uniform [-1/sqrt(f), 1/sqrt(f)] init for weights and bias."""
    if mode == "normal":
        return LinearHead(w=stream.normal((n_classes, feature_dim)),
                          b=np.zeros(n_classes))
    if mode == "fanin":
        bound = 1.0 / np.sqrt(feature_dim)
        w = (stream.uniform((n_classes, feature_dim)) * 2.0 - 1.0) * bound
        b = (stream.uniform(n_classes) * 2.0 - 1.0) * bound
        return LinearHead(w=w, b=b)
    raise ShapeError(f"unknown head init mode {mode!r}")


def class_loss_and_grad(head: LinearHead, z: np.ndarray,
                        labels) -> tuple[float, GradientPair]:
    """Mean cross-entropy of the head on features z, and its W/b gradients."""
    z = require_finite(z, "features")
    if z.ndim != 2 or z.shape[1] != head.w.shape[1]:
        raise ShapeError(f"features {z.shape} do not match head {head.w.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    n, c = z.shape[0], head.w.shape[0]
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != batch {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise LabelError(f"labels must lie in [0, {c})")
    logits = head.logits(z)
    loss = cross_entropy(logits, labels)
    delta = softmax(logits)
    delta[np.arange(n), labels] -= 1.0  # p - y
    return loss, GradientPair(g_w=delta.T @ z / n, g_b=delta.mean(axis=0))


def meta_loss(g_syn: GradientPair, g_real: GradientPair,
              include_bias: bool = True) -> float:
    """Cosine distance between the vectorized gradient pairs, in [0, 2]."""
    s = g_syn.vectorize(include_bias)
    r = g_real.vectorize(include_bias)
    if s.shape != r.shape:
        raise ShapeError(f"gradient shapes differ: {s.shape} vs {r.shape}")
    ns, nr = np.linalg.norm(s), np.linalg.norm(r)
    if ns == 0.0 or nr == 0.0:
        raise DegenerateGradientError("zero-norm classifier gradient")
    return float(1.0 - (s @ r) / (ns * nr))


def meta_grad_features(head: LinearHead, z_syn: np.ndarray, labels_syn,
                       g_syn: GradientPair, g_real: GradientPair,
                       include_bias: bool = True) -> np.ndarray:
    """Exact d(meta loss)/d(synthetic features), real side held fixed.

    With s the vectorized synthetic gradient and r the real one, the cosine
    pullback is dL/ds = -(r_hat - cos * s_hat)/|s|; splitting that into the
    (U, v) blocks matching (G_W, G_b) and differentiating the inner gradient
    maps gives, per row i with J_i = diag(p_i) - p_i p_i^T:
        dL/dz_i = (U^T (p_i - y_i) + W^T J_i (U z_i + v)) / N
    """
    z_syn = require_finite(z_syn, "features")
    labels = np.asarray(labels_syn, dtype=np.int64)
    n, c = z_syn.shape[0], head.w.shape[0]
    s = g_syn.vectorize(include_bias)
    r = g_real.vectorize(include_bias)
    ns, nr = np.linalg.norm(s), np.linalg.norm(r)
    if ns == 0.0 or nr == 0.0:
        raise DegenerateGradientError("zero-norm classifier gradient")
    s_hat, r_hat = s / ns, r / nr
    cos = float(s_hat @ r_hat)
    d_s = -(r_hat - cos * s_hat) / ns
    n_w = head.w.size
    u = d_s[:n_w].reshape(head.w.shape)
    v = d_s[n_w:] if include_bias else np.zeros(c)

    p = softmax(head.logits(z_syn))
    delta = p.copy()
    delta[np.arange(n), labels] -= 1.0
    a = z_syn @ u.T + v  # rows are U z_i + v
    jq = p * a - p * (p * a).sum(axis=1, keepdims=True)  # rows are J_i a_i
    return (delta @ u + jq @ head.w) / n


@dataclass
class DistillConfig:
    """Everything a distillation run needs besides the data and encoder."""

    iterations: int = 5000
    level_period: int = 200
    rounds: int = 10
    meta_lr: float = 0.002
    meta_lr_schedule: str = "constant"  # or "cosine" (decay to 0 over the run)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    head_init: str = "fanin"
    include_bias: bool = True
    real_batch_policy: str = "uniform"  # or "balanced": equal per-class counts
    render_resolution: int = 256
    crop_size: int = 224
    sigmoid_scale: float = 1.0
    flip_prob: float = 0.5
    crop_area_range: tuple[float, float] = (0.08, 1.0)
    crop_aspect_range: tuple[float, float] = (3.0 / 4.0, 4.0 / 3.0)
    noise_std: float = 0.2
    ablate_pyramid: bool = False
    ablate_decorrelate: bool = False
    ablate_augment: bool = False
    degenerate_budget: int = 50
    checkpoint_interval: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.level_period < 1:
            raise ShapeError("iterations and level period must be positive")
        if self.rounds < 1 and not self.ablate_augment:
            raise ShapeError("augment rounds must be >= 1 unless augmentation is ablated")
        if self.meta_lr_schedule not in ("constant", "cosine"):
            raise ShapeError(f"unknown meta lr schedule {self.meta_lr_schedule!r}")
        if self.real_batch_policy not in ("uniform", "balanced"):
            raise ShapeError(f"unknown real batch policy {self.real_batch_policy!r}")

    def lr_at(self, iteration: int) -> float:
        if self.meta_lr_schedule == "cosine":
            return self.meta_lr * 0.5 * (1.0 + np.cos(np.pi * iteration / self.iterations))
        return self.meta_lr

    def augment_config(self, image_mode: bool) -> AugmentConfig:
        if image_mode:
            return AugmentConfig(
                flip_prob=self.flip_prob, area_range=self.crop_area_range,
                aspect_range=self.crop_aspect_range, sigma=self.noise_std,
                rounds=self.rounds, out_size=(self.crop_size, self.crop_size))
        return AugmentConfig(
            flip_enabled=False, crop_enabled=False, sigma=self.noise_std,
            rounds=self.rounds, out_size=(self.crop_size, self.crop_size))


@dataclass
class DistillState:
    """Mutable run state: one synthetic sample per class plus optimizer moments."""

    mode: str  # "image" or "vector"
    labels: np.ndarray  # fixed, one class id per synthetic sample
    config: DistillConfig
    pyramids: list[PyramidImage] | None = None
    color: ColorTransform | None = None
    vectors: np.ndarray | None = None
    adam: dict = field(default_factory=dict)
    iteration: int = 0
    skipped: int = 0

    @property
    def n_classes(self) -> int:
        return len(self.labels)


class ShuffledSampler:
    """Uniform-with-reshuffle real-batch provider."""

    def __init__(self, inputs: np.ndarray, labels: np.ndarray, stream: RngStream):
        self.inputs = np.asarray(inputs, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.stream = stream
        self._order = stream.shuffle(len(self.labels))
        self._pos = 0

    def __call__(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        picked = []
        while len(picked) < n:
            if self._pos >= len(self._order):
                self._order = self.stream.shuffle(len(self.labels))
                self._pos = 0
            take = min(n - len(picked), len(self._order) - self._pos)
            picked.extend(self._order[self._pos : self._pos + take])
            self._pos += take
        idx = np.asarray(picked)
        return self.inputs[idx], self.labels[idx]


class BalancedSampler:
    """Per-class reshuffle queues; every batch has equal class counts.

    Removes the multinomial count noise of uniform draws, which the always
    balanced synthetic batch can never match. Requires n divisible by the
    class count.
    """

    def __init__(self, inputs: np.ndarray, labels: np.ndarray, stream: RngStream):
        self.inputs = np.asarray(inputs, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.stream = stream
        self._members = [np.flatnonzero(self.labels == cls)
                         for cls in range(int(self.labels.max()) + 1)]
        self._queues = [list(m[stream.shuffle(len(m))]) for m in self._members]

    def __call__(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        c = len(self._members)
        if n % c:
            raise ShapeError(f"balanced batch size {n} not divisible by {c} classes")
        per = n // c
        picked = []
        for cls in range(c):
            while len(self._queues[cls]) < per:
                members = self._members[cls]
                refill = list(members[self.stream.shuffle(len(members))])
                self._queues[cls].extend(refill)
            picked.extend(self._queues[cls][:per])
            self._queues[cls] = self._queues[cls][per:]
        idx = np.asarray(picked)
        return self.inputs[idx], self.labels[idx]


def make_sampler(policy: str, inputs: np.ndarray, labels: np.ndarray,
                 stream: RngStream):
    if policy == "balanced":
        return BalancedSampler(inputs, labels, stream)
    return ShuffledSampler(inputs, labels, stream)


def init_state(config: DistillConfig, n_classes: int, encoder: Encoder,
               real_inputs: np.ndarray, stream: RngStream) -> DistillState:
    """Build the synthetic set: pyramids for images, raw vectors otherwise."""
    labels = np.arange(n_classes, dtype=np.int64)
    if encoder.input_kind == "image":
        pyramids = [init_pyramid(stream, config.render_resolution,
                                 single_level=config.ablate_pyramid)
                    for _ in range(n_classes)]
        if config.ablate_decorrelate:
            color = ColorTransform.identity()
        else:
            color = color_matrix_from_dataset(real_inputs)
        return DistillState(mode="image", labels=labels, config=config,
                            pyramids=pyramids, color=color)
    # scaled so initial norms are ~1 regardless of dimension; the cosine
    # objective otherwise spends most of the budget shrinking the init
    dim = real_inputs.shape[1]
    vectors = stream.normal((n_classes, dim)) / np.sqrt(dim)
    return DistillState(mode="vector", labels=labels, config=config, vectors=vectors)


@dataclass
class StepDraws:
    """All randomness of one step, frozen so the loss is a pure function."""

    head: LinearHead
    syn_params: list | None
    real_batch: np.ndarray
    real_labels: np.ndarray
    real_params: list | None


def sample_step_draws(state: DistillState, encoder: Encoder, provider,
                      streams: dict) -> StepDraws:
    cfg = state.config
    head = sample_head(streams["head"], state.n_classes, encoder.feature_dim,
                       cfg.head_init)
    syn_params = None
    if not cfg.ablate_augment:
        aug_cfg = cfg.augment_config(state.mode == "image")
        shape = ((cfg.render_resolution,) * 2 if state.mode == "image"
                 else (state.vectors.shape[1],))
        syn_params = _draw_params(streams["augment_syn"], aug_cfg, shape,
                                  state.n_classes, aug_cfg.rounds)
    n_total = state.n_classes * (cfg.rounds if not cfg.ablate_augment else 1)
    real_batch, real_labels = provider(n_total)
    real_params = None
    if not cfg.ablate_augment:
        aug_cfg = cfg.augment_config(state.mode == "image")
        shape = (real_batch.shape[2:] if state.mode == "image"
                 else (real_batch.shape[1],))
        real_params = _draw_params(streams["augment_real"], aug_cfg,
                                   tuple(shape), n_total, 1)
    return StepDraws(head=head, syn_params=syn_params, real_batch=real_batch,
                     real_labels=real_labels, real_params=real_params)


def _draw_params(stream, aug_cfg, src_shape, n, rounds):
    params = []
    for _ in range(rounds):
        for _ in range(n):
            if len(src_shape) == 1:
                params.append(sample_params_vector(stream, aug_cfg, src_shape[0]))
            else:
                params.append(sample_params(stream, aug_cfg, src_shape[0], src_shape[1]))
    return params


def _render_all(state: DistillState) -> np.ndarray:
    if state.mode == "vector":
        return state.vectors.copy()
    return np.stack([render(p, state.color, state.config.sigmoid_scale)
                     for p in state.pyramids])


def _augmented_batch(rendered, params, labels, rounds, crop_size, image_mode):
    if params is None:  # augmentation ablated
        if image_mode and rendered.shape[-1] != crop_size:
            return resize_batch(rendered, crop_size, crop_size), labels
        return rendered, labels
    n = rendered.shape[0]
    rows = [apply(rendered[k % n], params[k]) for k in range(n * rounds)]
    return np.stack(rows), np.tile(labels, rounds)


def step_objective(state: DistillState, encoder: Encoder, draws: StepDraws,
                   rendered: np.ndarray | None = None):
    """Meta loss and intermediates for frozen draws; pure in the parameters."""
    cfg = state.config
    if rendered is None:
        rendered = _render_all(state)
    rounds = cfg.rounds if not cfg.ablate_augment else 1
    syn_batch, syn_labels = _augmented_batch(
        rendered, draws.syn_params, state.labels, rounds, cfg.crop_size,
        state.mode == "image")
    real_batch = draws.real_batch
    if draws.real_params is not None:
        real_batch = np.stack([apply(real_batch[i], draws.real_params[i])
                               for i in range(real_batch.shape[0])])
    elif state.mode == "image" and real_batch.shape[-1] != cfg.crop_size:
        real_batch = resize_batch(real_batch, cfg.crop_size, cfg.crop_size)

    z_syn = encoder.forward(syn_batch)
    z_real = encoder.forward(real_batch)
    ell_syn, g_syn = class_loss_and_grad(draws.head, z_syn, syn_labels)
    ell_real, g_real = class_loss_and_grad(draws.head, z_real, draws.real_labels)
    meta = meta_loss(g_syn, g_real, cfg.include_bias)
    return {
        "meta": meta, "ell_syn": ell_syn, "ell_real": ell_real,
        "g_syn": g_syn, "g_real": g_real, "z_syn": z_syn,
        "syn_batch": syn_batch, "syn_labels": syn_labels, "rendered": rendered,
    }


def synthetic_gradient(state: DistillState, encoder: Encoder, draws: StepDraws,
                       obj: dict) -> np.ndarray:
    """d(meta)/d(rendered synthetic samples), chained back through the step."""
    cfg = state.config
    dz = meta_grad_features(draws.head, obj["z_syn"], obj["syn_labels"],
                            obj["g_syn"], obj["g_real"], cfg.include_bias)
    d_batch = encoder.vjp(obj["syn_batch"], dz)
    n = state.n_classes
    rendered = obj["rendered"]
    if draws.syn_params is None:
        if state.mode == "image" and rendered.shape[-1] != cfg.crop_size:
            return np.stack([bilinear_resize_vjp(d_batch[i], rendered.shape[-2],
                                                 rendered.shape[-1])
                             for i in range(n)])
        return d_batch
    d_rendered = np.zeros_like(rendered)
    for k, params in enumerate(draws.syn_params):
        d_rendered[k % n] += apply_vjp(params, d_batch[k])
    return d_rendered


def _apply_updates(state: DistillState, d_rendered: np.ndarray) -> None:
    cfg = state.config
    lr = cfg.lr_at(state.iteration)
    if state.mode == "vector":
        key = "vectors"
        if key not in state.adam:
            state.adam[key] = AdamState.init(state.vectors.shape, lr=lr,
                                             beta1=cfg.adam_beta1,
                                             beta2=cfg.adam_beta2, eps=cfg.adam_eps)
        state.adam[key], state.vectors = adam_step(
            replace(state.adam[key], lr=lr), state.vectors, d_rendered)
        return
    for j, p in enumerate(state.pyramids):
        grads = render_vjp(p, state.color, d_rendered[j], cfg.sigmoid_scale)
        for li in range(p.active_count):
            key = (j, li)
            if key not in state.adam:
                state.adam[key] = AdamState.init(p.levels[li].shape, lr=lr,
                                                 beta1=cfg.adam_beta1,
                                                 beta2=cfg.adam_beta2,
                                                 eps=cfg.adam_eps)
            state.adam[key], p.levels[li] = adam_step(
                replace(state.adam[key], lr=lr), p.levels[li], grads[li])


def distill_step(state: DistillState, encoder: Encoder, provider,
                 streams: dict) -> dict:
    """One full distillation step; returns the metrics row."""
    draws = sample_step_draws(state, encoder, provider, streams)
    active = state.pyramids[0].active_count if state.mode == "image" else 0
    row = {"iteration": state.iteration, "active_levels": active}
    try:
        obj = step_objective(state, encoder, draws)
    except DegenerateGradientError:
        state.skipped += 1
        if state.skipped > state.config.degenerate_budget:
            raise
        row.update(meta_loss=float("nan"), ell_real=float("nan"),
                   ell_syn=float("nan"), grad_norm_syn=0.0, grad_norm_real=0.0)
        state.iteration += 1
        return row
    d_rendered = synthetic_gradient(state, encoder, draws, obj)
    _apply_updates(state, d_rendered)
    row.update(
        meta_loss=obj["meta"], ell_real=obj["ell_real"], ell_syn=obj["ell_syn"],
        grad_norm_syn=float(np.linalg.norm(
            obj["g_syn"].vectorize(state.config.include_bias))),
        grad_norm_real=float(np.linalg.norm(
            obj["g_real"].vectorize(state.config.include_bias))),
    )
    state.iteration += 1
    return row


def distill(config: DistillConfig, inputs: np.ndarray, labels: np.ndarray,
            encoder: Encoder, out_dir: str | Path | None = None,
            class_names: list[str] | None = None) -> tuple[DistillState, list[dict]]:
    """Run the full loop with the progressive level schedule and checkpoints."""
    streams = {name: stream_for(config.seed, name)
               for name in ("init", "head", "augment_syn", "augment_real", "sampler")}
    state = init_state(config, int(np.asarray(labels).max()) + 1, encoder,
                       inputs, streams["init"])
    provider = make_sampler(config.real_batch_policy, inputs, labels,
                            streams["sampler"])
    out_dir = Path(out_dir) if out_dir is not None else None
    metrics: list[dict] = []
    for it in range(config.iterations):
        if state.mode == "image" and it > 0 and it % config.level_period == 0:
            state.pyramids = [activate_next_level(p) for p in state.pyramids]
        metrics.append(distill_step(state, encoder, provider, streams))
        if out_dir and config.checkpoint_interval and \
                (it + 1) % config.checkpoint_interval == 0:
            _write_checkpoint(out_dir, state)
    if out_dir:
        _write_checkpoint(out_dir, state)
        write_metrics_csv(out_dir / "metrics.csv", metrics)
        export_synthetic(out_dir / "distilled", state, class_names)
    return state, metrics


def _write_checkpoint(out_dir: Path, state: DistillState) -> None:
    if state.mode != "image":
        return
    ckpt = out_dir / "checkpoints" / f"iter_{state.iteration:06d}"
    for j, p in enumerate(state.pyramids):
        save_pyramid(ckpt / f"class_{j:03d}", p, state.iteration)


def export_synthetic(out_dir: Path, state: DistillState,
                     class_names: list[str] | None = None) -> None:
    """Write the distilled set as a loadable dataset (PPM tree or NDT pair)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = class_names or [f"class_{j:03d}" for j in range(state.n_classes)]
    if state.mode == "image":
        for j, p in enumerate(state.pyramids):
            img = render(p, state.color, state.config.sigmoid_scale)
            class_dir = out_dir / names[j]
            class_dir.mkdir(parents=True, exist_ok=True)
            export_ppm(img, class_dir / "synthetic.ppm")
    else:
        write_ndt(out_dir / "features.ndt", state.vectors)
        write_ndt(out_dir / "labels.ndt", state.labels.astype(np.uint32))
        (out_dir / "names.txt").write_text("\n".join(names) + "\n")


def write_metrics_csv(path: str | Path, metrics: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_FIELDS)
        for row in metrics:
            writer.writerow([_fmt(row[k]) for k in METRIC_FIELDS])


def _fmt(value):
    if isinstance(value, float):
        return format(value, ".12g")
    return value
