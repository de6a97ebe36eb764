"""Command-line surface chaining the engine's workflows.

Every command validates its configuration, is deterministic given seeds, and
exits nonzero with a distinct message on typed errors. Output directories
always receive the resolved configuration for bitwise reproduction.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .config import RunConfig, load_config, write_resolved
from .data import (Dataset, load_dataset, make_gaussian_mixture, make_shapes,
                   preprocess_center, save_image_dataset, save_vector_dataset)
from .distill import distill
from .encoders import (ConvSmallEncoder, EmbeddingTable, IdentityEncoder,
                       MlpEncoder, RandomProjectionEncoder, embed_dataset,
                       load_embeddings, save_embeddings)
from .errors import ConfigError, GradDistillError
from .evaluation import (EvalReport, baseline_centroids, baseline_neighbors,
                         baseline_random, mutual_knn_alignment, pca2, train_probe)
from .rng import RngStream, stream_for


def build_encoder(cfg: RunConfig, dataset: Dataset):
    """Construct the frozen encoder named in the config for this dataset."""
    stream = stream_for(cfg.encoder_seed, "encoder-init")
    if cfg.encoder == "identity":
        if dataset.kind != "vector":
            raise ConfigError("identity encoder requires a vector dataset")
        return IdentityEncoder(dataset.inputs.shape[1])
    if cfg.encoder == "random_projection":
        if dataset.kind != "vector":
            raise ConfigError("random_projection encoder requires a vector dataset")
        return RandomProjectionEncoder(dataset.inputs.shape[1], cfg.feature_dim, stream)
    if cfg.encoder == "mlp":
        if dataset.kind != "vector":
            raise ConfigError("mlp encoder requires a vector dataset")
        return MlpEncoder(dataset.inputs.shape[1], cfg.mlp_hidden, cfg.feature_dim,
                          stream, activation=cfg.encoder_activation)
    if dataset.kind != "image":
        raise ConfigError("conv_small encoder requires an image dataset")
    return ConvSmallEncoder(cfg.feature_dim, stream, cfg.conv_channels1,
                            cfg.conv_channels2, activation=cfg.encoder_activation)


def embed_for_eval(encoder, dataset: Dataset, crop_size: int) -> EmbeddingTable:
    """Deterministic eval-path embeddings (center preprocessing for images)."""
    inputs = dataset.inputs
    if dataset.kind == "image":
        inputs = preprocess_center(inputs, crop_size)
    return embed_dataset(encoder, inputs, dataset.labels, names=dataset.class_names)


def _load_train(cfg: RunConfig) -> Dataset:
    if not cfg.train_path:
        raise ConfigError("train_path is not set")
    return load_dataset(cfg.train_path)


def _load_test(cfg: RunConfig) -> Dataset:
    if not cfg.test_path:
        raise ConfigError("test_path is not set")
    return load_dataset(cfg.test_path)


def cmd_distill(args) -> int:
    cfg = load_config(args.config, _seed_override(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train = _load_train(cfg)
    encoder = build_encoder(cfg, train)
    write_resolved(cfg, out / "config.resolved")
    distill(cfg.distill_config(), train.inputs, train.labels, encoder,
            out_dir=out, class_names=train.class_names)
    return 0


def _probe_once(cfg: RunConfig, encoder, inputs, labels, test_table, seed: int) -> float:
    image_mode = inputs.ndim == 4
    _, acc = train_probe(inputs, labels, encoder, test_table,
                         cfg.augment_config(image_mode), cfg.probe_config(),
                         stream_for(seed, "probe"))
    return acc


def _select_train(cfg: RunConfig, args, train: Dataset, encoder, seed: int):
    """Pick the probe's training inputs for one repeat."""
    source = args.train
    if source == "full":
        return train.inputs, train.labels
    if source == "distilled":
        distilled = load_dataset(_require(args.distilled, "--distilled"))
        return distilled.inputs, distilled.labels
    table = embed_for_eval(encoder, train, cfg.crop_size)
    if source == "random":
        idx = baseline_random(train.labels, stream_for(seed, "baseline-random"))
    elif source == "centroids":
        idx = baseline_centroids(table)
    elif source == "neighbors":
        distilled = load_dataset(_require(args.distilled, "--distilled"))
        syn_table = embed_for_eval(encoder, distilled, cfg.crop_size)
        idx = baseline_neighbors(table, syn_table.features)
    else:
        raise ConfigError(f"unknown train source {source!r}")
    return train.inputs[idx], train.labels[idx]


def _require(value, flag):
    if not value:
        raise ConfigError(f"{flag} is required for this train source")
    return value


def cmd_eval_probe(args) -> int:
    cfg = load_config(args.config, _seed_override(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out / "config.resolved")
    train = _load_train(cfg)
    test = _load_test(cfg)
    encoder = build_encoder(cfg, train)
    test_table = embed_for_eval(encoder, test, cfg.crop_size)
    report = EvalReport(train_set=args.train, config_snapshot=cfg.to_dict())
    for rep in range(args.repeats):
        seed = cfg.seed + rep
        inputs, labels = _select_train(cfg, args, train, encoder, seed)
        report.add(seed, _probe_once(cfg, encoder, inputs, labels, test_table, seed))
    with open(out / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["train_set", "seed", "accuracy"])
        writer.writerows(report.to_csv_rows())
    (out / "report.txt").write_text(report.summary_line() + "\n")
    print(report.summary_line())
    return 0


def cmd_baselines(args) -> int:
    cfg = load_config(args.config, _seed_override(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out / "config.resolved")
    train = _load_train(cfg)
    encoder = build_encoder(cfg, train)
    table = embed_for_eval(encoder, train, cfg.crop_size)
    rows = []
    random_idx = baseline_random(train.labels, stream_for(cfg.seed, "baseline-random"))
    rows += [("random", cls, int(i)) for cls, i in enumerate(random_idx)]
    centroid_idx = baseline_centroids(table)
    rows += [("centroids", cls, int(i)) for cls, i in enumerate(centroid_idx)]
    if args.distilled:
        distilled = load_dataset(args.distilled)
        syn_table = embed_for_eval(encoder, distilled, cfg.crop_size)
        neighbor_idx = baseline_neighbors(table, syn_table.features)
        rows += [("neighbors", cls, int(i)) for cls, i in enumerate(neighbor_idx)]
    with open(out / "baselines.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "class", "index"])
        writer.writerows(rows)
    return 0


def cmd_align(args) -> int:
    table_a = load_embeddings(args.a)
    table_b = load_embeddings(args.b)
    score = mutual_knn_alignment(table_a, table_b, k=args.k)
    print(score)
    return 0


def cmd_pca(args) -> int:
    table = load_embeddings(args.emb)
    coords, labels = pca2(table)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "label"])
        for (x, y), lab in zip(coords, labels):
            writer.writerow([format(x, ".12g"), format(y, ".12g"), int(lab)])
    return 0


def cmd_embed(args) -> int:
    cfg = load_config(args.config, _seed_override(args))
    dataset = load_dataset(args.data)
    encoder = build_encoder(cfg, dataset)
    table = embed_for_eval(encoder, dataset, cfg.crop_size)
    out = Path(args.out)
    save_embeddings(out, table)
    write_resolved(cfg, out / "config.resolved")
    return 0


def cmd_make_toy(args) -> int:
    out = Path(args.out)
    stream = RngStream(args.seed, 7)
    if args.kind == "gaussians":
        feats, labels = make_gaussian_mixture(
            stream, n_classes=args.classes, dim=args.dim,
            per_class=args.per_class, sigma=args.sigma)
        save_vector_dataset(out / "train", feats, labels)
        feats_t, labels_t = make_gaussian_mixture(
            stream, n_classes=args.classes, dim=args.dim,
            per_class=args.test_per_class, sigma=args.sigma)
        save_vector_dataset(out / "test", feats_t, labels_t)
    else:
        imgs, labels, names = make_shapes(stream, per_class=args.per_class,
                                          size=args.size)
        save_image_dataset(out / "train", imgs, labels, names)
        imgs_t, labels_t, _ = make_shapes(stream, per_class=args.test_per_class,
                                          size=args.size)
        save_image_dataset(out / "test", imgs_t, labels_t, names)
    return 0


def _seed_override(args) -> dict:
    return {"seed": args.seed} if getattr(args, "seed", None) is not None else {}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graddistill",
        description="Distill datasets to one synthetic sample per class and "
                    "evaluate the result with linear probes.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")

    p = sub.add_parser("distill", help="run a distillation and export artifacts")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval-probe", help="train linear probes and report accuracy")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--train", required=True,
                   choices=["full", "distilled", "random", "centroids", "neighbors"])
    p.add_argument("--distilled", default=None, help="distilled dataset directory")
    p.add_argument("--repeats", type=int, default=1)
    p.set_defaults(func=cmd_eval_probe)

    p = sub.add_parser("baselines", help="compute and persist coreset index sets")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--distilled", default=None)
    p.set_defaults(func=cmd_baselines)

    p = sub.add_parser("align", help="mutual k-NN alignment of two embedding tables")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("pca", help="2-D PCA of an embedding table to CSV")
    p.add_argument("--emb", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pca)

    p = sub.add_parser("embed", help="embed a dataset with a built-in encoder")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("make-toy", help="generate a toy dataset")
    p.add_argument("--kind", required=True, choices=["gaussians", "shapes"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--per-class", type=int, default=100, dest="per_class")
    p.add_argument("--test-per-class", type=int, default=100, dest="test_per_class")
    p.set_defaults(func=cmd_make_toy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GradDistillError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
