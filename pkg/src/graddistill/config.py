"""Flat key=value run configuration.

Precedence: built-in defaults < config file < GRADDISTILL_* environment
variables < explicit CLI flags. Unknown keys are rejected, and every command
writes its fully resolved configuration into the output directory so a run
can be reproduced from that file alone.
"""

from __future__ import annotations

import os
from pathlib import Path

from .augment import AugmentConfig
from .distill import DistillConfig
from .errors import ConfigError
from .evaluation import ProbeConfig

ENV_PREFIX = "GRADDISTILL_"


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    "seed": (int, 0),
    "train_path": (str, ""),
    "test_path": (str, ""),
    "encoder": (str, "conv_small"),
    "encoder_seed": (int, 1),
    "encoder_activation": (str, "tanh"),
    "feature_dim": (int, 64),
    "mlp_hidden": (int, 128),
    "conv_channels1": (int, 16),
    "conv_channels2": (int, 32),
    "iterations": (int, 5000),
    "level_period": (int, 200),
    "augment_rounds": (int, 10),
    "meta_lr": (float, 0.002),
    "meta_lr_schedule": (str, "constant"),
    "adam_beta1": (float, 0.9),
    "adam_beta2": (float, 0.999),
    "adam_eps": (float, 1e-8),
    "head_init": (str, "fanin"),
    "real_batch_policy": (str, "uniform"),
    "include_bias": (_bool, True),
    "degenerate_budget": (int, 50),
    "checkpoint_interval": (int, 1000),
    "render_resolution": (int, 256),
    "crop_size": (int, 224),
    "sigmoid_scale": (float, 1.0),
    "flip_prob": (float, 0.5),
    "crop_area_min": (float, 0.08),
    "crop_area_max": (float, 1.0),
    "crop_aspect_min": (float, 0.75),
    "crop_aspect_max": (float, 4.0 / 3.0),
    "noise_std": (float, 0.2),
    "ablate_pyramid": (_bool, False),
    "ablate_decorrelate": (_bool, False),
    "ablate_augment": (_bool, False),
    "probe_epochs": (int, 1000),
    "probe_batch": (int, 100),
    "probe_lr": (float, 0.001 / 256),
    "probe_cosine": (_bool, True),
    "probe_patience": (int, 50),
    "probe_eval_split": (str, "holdout"),
    "knn_k": (int, 10),
}

_CHOICES = {
    "encoder": {"identity", "random_projection", "mlp", "conv_small"},
    "encoder_activation": {"tanh", "relu"},
    "head_init": {"fanin", "normal"},
    "probe_eval_split": {"holdout", "test"},
    "meta_lr_schedule": {"constant", "cosine"},
    "real_batch_policy": {"uniform", "balanced"},
}


class RunConfig:
    """Resolved flat configuration with attribute access."""

    def __init__(self, values: dict):
        for key, (_, default) in SCHEMA.items():
            setattr(self, key, values.get(key, default))
        self._validate()

    def _validate(self):
        for key, choices in _CHOICES.items():
            if getattr(self, key) not in choices:
                raise ConfigError(f"{key} must be one of {sorted(choices)}")
        if self.iterations < 1 or self.level_period < 1:
            raise ConfigError("iterations and level_period must be positive")
        if self.augment_rounds < 1 and not self.ablate_augment:
            raise ConfigError("augment_rounds must be >= 1 unless ablate_augment")
        if self.probe_epochs > 0 and not 0 <= self.probe_patience < self.probe_epochs:
            raise ConfigError("probe_patience must be < probe_epochs")
        if not (0 < self.crop_area_min <= self.crop_area_max <= 1.0):
            raise ConfigError("bad crop area range")
        if not (0 < self.crop_aspect_min <= self.crop_aspect_max):
            raise ConfigError("bad crop aspect range")
        if self.crop_size < 1 or self.render_resolution < 1:
            raise ConfigError("sizes must be positive")

    def to_dict(self) -> dict:
        return {key: getattr(self, key) for key in SCHEMA}

    def distill_config(self) -> DistillConfig:
        return DistillConfig(
            iterations=self.iterations, level_period=self.level_period,
            rounds=self.augment_rounds, meta_lr=self.meta_lr,
            meta_lr_schedule=self.meta_lr_schedule,
            adam_beta1=self.adam_beta1, adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps, head_init=self.head_init,
            include_bias=self.include_bias,
            real_batch_policy=self.real_batch_policy,
            render_resolution=self.render_resolution, crop_size=self.crop_size,
            sigmoid_scale=self.sigmoid_scale, flip_prob=self.flip_prob,
            crop_area_range=(self.crop_area_min, self.crop_area_max),
            crop_aspect_range=(self.crop_aspect_min, self.crop_aspect_max),
            noise_std=self.noise_std, ablate_pyramid=self.ablate_pyramid,
            ablate_decorrelate=self.ablate_decorrelate,
            ablate_augment=self.ablate_augment,
            degenerate_budget=self.degenerate_budget,
            checkpoint_interval=self.checkpoint_interval, seed=self.seed)

    def probe_config(self) -> ProbeConfig:
        return ProbeConfig(
            epochs=self.probe_epochs, batch_size=self.probe_batch,
            lr=self.probe_lr, cosine_schedule=self.probe_cosine,
            patience=self.probe_patience, eval_split=self.probe_eval_split,
            head_init=self.head_init)

    def augment_config(self, image_mode: bool) -> AugmentConfig:
        if not image_mode:
            return AugmentConfig(flip_enabled=False, crop_enabled=False,
                                 sigma=self.noise_std, rounds=1)
        return AugmentConfig(
            flip_prob=self.flip_prob,
            area_range=(self.crop_area_min, self.crop_area_max),
            aspect_range=(self.crop_aspect_min, self.crop_aspect_max),
            sigma=self.noise_std, rounds=1,
            out_size=(self.crop_size, self.crop_size))


def parse_kv_text(text: str, source: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(value.strip())
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def load_config(path: str | Path | None = None, overrides: dict | None = None,
                env: dict | None = None) -> RunConfig:
    """Merge defaults, file, environment, and explicit overrides."""
    values: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        values.update(parse_kv_text(path.read_text(), str(path)))
    env = os.environ if env is None else env
    for key in SCHEMA:
        env_key = ENV_PREFIX + key.upper()
        if env_key in env:
            parser = SCHEMA[key][0]
            try:
                values[key] = parser(env[env_key])
            except ValueError as exc:
                raise ConfigError(f"${env_key}: bad value: {exc}") from exc
    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = value
    return RunConfig(values)


def write_resolved(cfg: RunConfig, path: str | Path) -> None:
    """Persist the resolved configuration as a loadable key=value file."""
    lines = []
    for key in sorted(SCHEMA):
        value = getattr(cfg, key)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = format(value, ".17g")
        lines.append(f"{key}={value}")
    Path(path).write_text("\n".join(lines) + "\n")
