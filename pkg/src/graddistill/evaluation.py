"""Everything downstream of distillation: linear probes, coreset baselines,
nearest-neighbor scoring, mutual k-NN alignment, and 2-D PCA export.

All distance-based selections use cosine distance, with ties broken by the
lowest index. Probe training augments the train set each epoch through the
same path distillation uses and early-stops on a configurable eval split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .augment import AugmentConfig, apply, sample_params, sample_params_vector
from .distill import LinearHead, class_loss_and_grad, sample_head
from .encoders import EmbeddingTable, Encoder
from .errors import ShapeError
from .numcore import AdamState, adam_step
from .rng import RngStream

_TINY = 1e-300


@dataclass
class ProbeConfig:
    """Linear-probe training protocol."""

    epochs: int = 1000
    batch_size: int = 100
    lr: float = 0.001 / 256  # literal protocol value; override for desk-scale runs
    cosine_schedule: bool = True
    patience: int = 50
    eval_split: str = "holdout"  # "holdout" or "test" (early-stops on test accuracy)
    head_init: str = "fanin"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ShapeError("bad probe epochs/batch size")
        if self.epochs > 0 and not 0 <= self.patience < self.epochs:
            raise ShapeError("patience must be < epochs")
        if self.eval_split not in ("holdout", "test"):
            raise ShapeError(f"unknown eval split {self.eval_split!r}")


def head_accuracy(head: LinearHead, table: EmbeddingTable) -> float:
    pred = np.argmax(head.logits(table.features), axis=1)
    return float((pred == np.asarray(table.labels, dtype=np.int64)).mean())


def _split_eval(test: EmbeddingTable, mode: str):
    """holdout: even rows pick the early-stop head, odd rows are reported."""
    if mode == "test":
        return test, test
    idx = np.arange(test.features.shape[0])
    val = EmbeddingTable(test.features[idx % 2 == 0], test.labels[idx % 2 == 0])
    rep = EmbeddingTable(test.features[idx % 2 == 1], test.labels[idx % 2 == 1])
    return val, rep


def train_probe(train_inputs: np.ndarray, train_labels, encoder: Encoder,
                test: EmbeddingTable, aug_cfg: AugmentConfig, cfg: ProbeConfig,
                stream: RngStream) -> tuple[LinearHead, float]:
    """Train a fresh linear head on encoder features of the augmented train set.

    Returns the best-observed head and its accuracy on the reporting split.
    """
    train_inputs = np.asarray(train_inputs, dtype=np.float64)
    train_labels = np.asarray(train_labels, dtype=np.int64)
    n = train_inputs.shape[0]
    n_classes = int(train_labels.max()) + 1
    head = sample_head(stream, n_classes, encoder.feature_dim, cfg.head_init)
    val, rep = _split_eval(test, cfg.eval_split)
    if cfg.epochs == 0:
        return head, head_accuracy(head, rep)

    adam_w = AdamState.init(head.w.shape, lr=cfg.lr)
    adam_b = AdamState.init(head.b.shape, lr=cfg.lr)
    best_val, best_head, since_best = -1.0, head, 0
    for epoch in range(cfg.epochs):
        lr = cfg.lr
        if cfg.cosine_schedule:
            lr = cfg.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
        adam_w = replace(adam_w, lr=lr)
        adam_b = replace(adam_b, lr=lr)
        augmented = _augment_once(train_inputs, aug_cfg, stream)
        z = encoder.forward(augmented)
        order = stream.shuffle(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, grad = class_loss_and_grad(head, z[idx], train_labels[idx])
            adam_w, new_w = adam_step(adam_w, head.w, grad.g_w)
            adam_b, new_b = adam_step(adam_b, head.b, grad.g_b)
            head = LinearHead(w=new_w, b=new_b)
        acc = head_accuracy(head, val)
        if acc > best_val:
            best_val, best_head, since_best = acc, head, 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    return best_head, head_accuracy(best_head, rep)


def _augment_once(inputs, aug_cfg, stream):
    rows = []
    for i in range(inputs.shape[0]):
        if inputs.ndim == 2:
            params = sample_params_vector(stream, aug_cfg, inputs.shape[1])
        else:
            params = sample_params(stream, aug_cfg, inputs.shape[2], inputs.shape[3])
        rows.append(apply(inputs[i], params))
    return np.stack(rows)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, _TINY)


def baseline_random(labels, stream: RngStream) -> np.ndarray:
    """One uniformly chosen index per class, classes in ascending order."""
    labels = np.asarray(labels, dtype=np.int64)
    picks = []
    for cls in range(int(labels.max()) + 1):
        members = np.flatnonzero(labels == cls)
        if members.size == 0:
            raise ShapeError(f"class {cls} has no samples")
        picks.append(int(members[stream.randint(members.size)]))
    return np.asarray(picks)


def baseline_centroids(emb: EmbeddingTable) -> np.ndarray:
    """Per class, the row whose embedding is cosine-closest to the class mean."""
    labels = np.asarray(emb.labels, dtype=np.int64)
    unit = _unit_rows(emb.features)
    picks = []
    for cls in range(int(labels.max()) + 1):
        members = np.flatnonzero(labels == cls)
        mean = emb.features[members].mean(axis=0)
        mean_unit = mean / max(np.linalg.norm(mean), _TINY)
        sims = unit[members] @ mean_unit
        picks.append(int(members[np.argmax(sims)]))
    return np.asarray(picks)


def baseline_neighbors(emb: EmbeddingTable, synthetic_features: np.ndarray) -> np.ndarray:
    """Per class, the row cosine-closest to that class's synthetic embedding."""
    labels = np.asarray(emb.labels, dtype=np.int64)
    synthetic_features = np.asarray(synthetic_features, dtype=np.float64)
    unit = _unit_rows(emb.features)
    syn_unit = _unit_rows(synthetic_features)
    picks = []
    for cls in range(int(labels.max()) + 1):
        members = np.flatnonzero(labels == cls)
        sims = unit[members] @ syn_unit[cls]
        picks.append(int(members[np.argmax(sims)]))
    return np.asarray(picks)


def knn_eval(train: EmbeddingTable, test: EmbeddingTable) -> float:
    """1-NN accuracy by cosine distance; ties go to the lowest train index."""
    train_unit = _unit_rows(train.features)
    test_unit = _unit_rows(test.features)
    sims = test_unit @ train_unit.T
    nearest = np.argmax(sims, axis=1)
    pred = np.asarray(train.labels, dtype=np.int64)[nearest]
    return float((pred == np.asarray(test.labels, dtype=np.int64)).mean())


def _knn_sets(features: np.ndarray, k: int) -> list[set]:
    unit = _unit_rows(features)
    sims = unit @ unit.T
    np.fill_diagonal(sims, -np.inf)
    idx = np.argpartition(-sims, k - 1, axis=1)[:, :k]
    return [set(map(int, row)) for row in idx]


def mutual_knn_alignment(emb_a: EmbeddingTable, emb_b: EmbeddingTable,
                         k: int = 10) -> float:
    """Mean fraction of shared cosine k-NN sets across the two spaces."""
    a, b = emb_a.features, emb_b.features
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"row counts differ: {a.shape[0]} vs {b.shape[0]}")
    n = a.shape[0]
    if not 1 <= k <= n - 1:
        raise ShapeError(f"k must lie in [1, {n - 1}]")
    sets_a = _knn_sets(a, k)
    sets_b = _knn_sets(b, k)
    overlap = [len(sa & sb) / k for sa, sb in zip(sets_a, sets_b)]
    return float(np.mean(overlap))


def pca2(emb: EmbeddingTable) -> tuple[np.ndarray, np.ndarray]:
    """Project onto the top-2 principal axes; deterministic sign convention."""
    x = emb.features - emb.features.mean(axis=0)
    cov = (x.T @ x) / max(x.shape[0] - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    components = eigvecs[:, ::-1][:, :2].copy()  # descending eigenvalue order
    for j in range(components.shape[1]):
        peak = np.argmax(np.abs(components[:, j]))
        if components[peak, j] < 0:
            components[:, j] = -components[:, j]
    return x @ components, np.asarray(emb.labels)


@dataclass
class EvalReport:
    """Accuracies of repeated probe runs for one training-set choice."""

    train_set: str
    seeds: list[int] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)
    config_snapshot: dict = field(default_factory=dict)

    def add(self, seed: int, accuracy: float) -> None:
        self.seeds.append(seed)
        self.accuracies.append(accuracy)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float | None:
        if len(self.accuracies) < 2:
            return None  # single run: no spread to report
        return float(np.std(self.accuracies, ddof=1))

    def summary_line(self) -> str:
        if self.std is None:
            return f"{self.train_set}: {self.mean:.4f} (single run)"
        return f"{self.train_set}: {self.mean:.4f} +/- {self.std:.4f} over {len(self.seeds)} seeds"

    def to_csv_rows(self) -> list[list]:
        return [[self.train_set, seed, format(acc, ".12g")]
                for seed, acc in zip(self.seeds, self.accuracies)]
