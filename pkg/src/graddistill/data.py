"""Dataset ingestion and the toy generators used for desk-scale runs.

Image datasets are directory trees with one subdirectory per class holding
binary PPM files; class ids follow sorted subdirectory names and rows follow
sorted filenames. Vector datasets are a directory with features.ndt [n, d]
and labels.ndt [n].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError
from .ndt import read_ndt, write_ndt
from .ppm import export_ppm, import_ppm
from .resample import resize_batch
from .rng import RngStream


@dataclass
class Dataset:
    kind: str  # "image" or "vector"
    inputs: np.ndarray  # n x 3 x H x W or n x d
    labels: np.ndarray
    class_names: list[str]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


def load_dataset(root: str | Path) -> Dataset:
    root = Path(root)
    if not root.exists():
        raise DatasetError(f"dataset path {root} does not exist")
    if (root / "features.ndt").exists():
        return _load_vector(root)
    return _load_images(root)


def _load_vector(root: Path) -> Dataset:
    features = read_ndt(root / "features.ndt")
    labels = read_ndt(root / "labels.ndt").astype(np.int64)
    if features.ndim != 2 or labels.shape != (features.shape[0],):
        raise DatasetError(f"{root}: features/labels dims are inconsistent")
    names_path = root / "names.txt"
    if names_path.exists():
        names = names_path.read_text().splitlines()
    else:
        names = [f"class_{j:03d}" for j in range(int(labels.max()) + 1)]
    return Dataset(kind="vector", inputs=features, labels=labels, class_names=names)


def _load_images(root: Path) -> Dataset:
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise DatasetError(f"{root}: no class subdirectories")
    images, labels, names = [], [], []
    for cls_id, cls_dir in enumerate(class_dirs):
        names.append(cls_dir.name)
        files = sorted(cls_dir.glob("*.ppm"))
        if not files:
            raise DatasetError(f"{cls_dir}: class has no PPM samples")
        for path in files:
            images.append(import_ppm(path))
            labels.append(cls_id)
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise DatasetError(f"{root}: inconsistent image shapes {sorted(shapes)}")
    return Dataset(kind="image", inputs=np.stack(images),
                   labels=np.asarray(labels, dtype=np.int64), class_names=names)


def preprocess_center(images: np.ndarray, crop_size: int) -> np.ndarray:
    """Deterministic eval-time path: shortest side to ceil(8*crop/7), center crop."""
    short = math.ceil(8 * crop_size / 7)
    n, _, h, w = images.shape
    if h <= w:
        new_h, new_w = short, max(1, round(w * short / h))
    else:
        new_h, new_w = max(1, round(h * short / w)), short
    resized = resize_batch(images, new_h, new_w)
    top = (new_h - crop_size) // 2
    left = (new_w - crop_size) // 2
    return resized[:, :, top : top + crop_size, left : left + crop_size]


def save_vector_dataset(out_dir: str | Path, features: np.ndarray, labels,
                        names: list[str] | None = None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_ndt(out_dir / "features.ndt", features)
    write_ndt(out_dir / "labels.ndt", np.asarray(labels).astype(np.uint32))
    if names:
        (out_dir / "names.txt").write_text("\n".join(names) + "\n")


def save_image_dataset(out_dir: str | Path, images: np.ndarray, labels,
                       names: list[str]) -> None:
    out_dir = Path(out_dir)
    labels = np.asarray(labels)
    counters = [0] * len(names)
    for img, lab in zip(images, labels):
        cls_dir = out_dir / names[int(lab)]
        cls_dir.mkdir(parents=True, exist_ok=True)
        export_ppm(img, cls_dir / f"sample_{counters[int(lab)]:04d}.ppm")
        counters[int(lab)] += 1


def make_gaussian_mixture(stream: RngStream, n_classes: int = 5, dim: int = 16,
                          per_class: int = 100, sigma: float = 0.5,
                          separation: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic Gaussian blobs with pairwise mean distance `separation`.

    Means sit on scaled standard basis vectors (e_i * separation / sqrt(2)),
    so every pair of means is exactly `separation` apart.
    """
    if n_classes > dim:
        raise DatasetError("need dim >= n_classes for basis-vector means")
    means = np.zeros((n_classes, dim))
    for j in range(n_classes):
        means[j, j] = separation / math.sqrt(2.0)
    features = stream.normal((n_classes * per_class, dim)) * sigma
    labels = np.repeat(np.arange(n_classes), per_class)
    features += means[labels]
    return features, labels


_SHAPE_NAMES = ["cross", "disk", "square"]


def make_shapes(stream: RngStream, per_class: int = 300, size: int = 32
                ) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Disk / square / cross images with jittered position and color.

    Shapes are drawn with soft 1-pixel edges on a dim noisy background; the
    class signal is geometry only, color and position are nuisance factors.
    """
    images, labels = [], []
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for cls_id, name in enumerate(_SHAPE_NAMES):
        for _ in range(per_class):
            cx = size / 2 + (stream.uniform() - 0.5) * size * 0.25
            cy = size / 2 + (stream.uniform() - 0.5) * size * 0.25
            radius = size * (0.24 + 0.08 * stream.uniform())
            dx, dy = xx - cx, yy - cy
            if name == "disk":
                dist = np.sqrt(dx * dx + dy * dy) - radius
            elif name == "square":
                dist = np.maximum(np.abs(dx), np.abs(dy)) - radius
            else:  # cross: union of two bars
                bar = radius / 3.0
                horiz = np.maximum(np.abs(dx) - radius, np.abs(dy) - bar)
                vert = np.maximum(np.abs(dy) - radius, np.abs(dx) - bar)
                dist = np.minimum(horiz, vert)
            mask = np.clip(0.5 - dist, 0.0, 1.0)  # 1 inside, soft 1px edge
            color = 0.45 + 0.55 * stream.uniform(3)
            bg = 0.08 + 0.10 * stream.uniform()
            img = np.empty((3, size, size))
            for ch in range(3):
                img[ch] = bg * (1.0 - mask) + color[ch] * mask
            img += 0.02 * stream.normal((3, size, size))
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(cls_id)
    return np.stack(images), np.asarray(labels, dtype=np.int64), list(_SHAPE_NAMES)
