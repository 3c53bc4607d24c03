"""Run configuration and presets."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, fields

from .data import MASK_STRATEGIES, SyntheticSpec
from .errors import ConfigError
from .loss import AslParams, LossWeights

# Per-dataset settings reported for the full-scale benchmarks: batch size,
# learning rate and the two loss weights. Kept for reference; desk-scale runs
# train from scratch and need a larger learning rate (see ``RunConfig.lr``).
BENCHMARK_SETTINGS = {
    "coco": {"batch_size": 52, "lr": 5e-5, "lambda1": 1.0, "lambda2": 0.8, "label_cardinality": 2.9},
    "voc": {"batch_size": 64, "lr": 5e-5, "lambda1": 1.0, "lambda2": 0.1, "label_cardinality": 1.5},
    "nus": {"batch_size": 128, "lr": 9e-5, "lambda1": 1.0, "lambda2": 2.0, "label_cardinality": 2.4},
}


@dataclass(frozen=True)
class RunConfig:
    # data
    num_images: int = 2500
    n_test: int = 500
    num_classes: int = 10
    patches: int = 16
    d_raw: int = 16
    objects_per_image_mean: float = 2.9
    noise_sigma: float = 0.55
    max_patches_per_object: int = 6
    data_seed: int = 0
    # masking
    p: float = 0.5
    mask_strategy: str = "pair"
    # model
    d_v: int = 64
    d_t: int = 32
    d_1: int = 128
    d_2: int = 64
    temperature: float = 1.0
    # components
    region: bool = True
    self_attn: bool = True
    sgfe: bool = True
    srfl: bool = True
    collab: bool = True
    # loss
    gamma_pos: float = 0.0
    gamma_neg: float = 2.0
    clip_c: float = 0.05
    lambda1: float = 1.0
    lambda2: float = 0.8
    # optimisation
    epochs: int = 40
    batch_size: int = 64
    lr: float = 5e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    ema_decay: float = 0.9997
    ema_warmup: bool = True
    eval_with_ema: bool = True
    eval_every: int = 10
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = ("num_classes", "patches", "d_raw", "d_v", "d_t", "d_1", "d_2", "batch_size", "eval_every")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0.0 < self.p <= 1.0:
            raise ConfigError(f"p must lie in (0, 1], got {self.p}")
        if self.mask_strategy not in MASK_STRATEGIES:
            raise ConfigError(f"mask_strategy must be one of {MASK_STRATEGIES}")
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")
        if not 0.0 < self.ema_decay < 1.0:
            raise ConfigError("ema_decay must lie in (0, 1)")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be non-negative")
        if self.lambda1 == 0 and (self.lambda2 == 0 or not self.collab):
            raise ConfigError("at least one loss term needs a positive weight")
        if not 0 <= self.n_test < self.num_images:
            raise ConfigError("n_test must be smaller than num_images")
        self.asl()
        self.loss_weights()

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def asl(self) -> AslParams:
        return AslParams(self.gamma_pos, self.gamma_neg, self.clip_c)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2 if self.collab else 0.0)

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            num_images=self.num_images,
            num_classes=self.num_classes,
            patches=self.patches,
            raw_dim=self.d_raw,
            objects_per_image_mean=self.objects_per_image_mean,
            noise_sigma=self.noise_sigma,
            max_patches_per_object=self.max_patches_per_object,
            seed=self.data_seed,
        )

    @property
    def toggles(self) -> dict[str, bool]:
        return {k: getattr(self, k) for k in TOGGLES}

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        return cls(**{k: coerce(known[k], v) for k, v in d.items()})

    def write_json(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read_json(cls, path: str | os.PathLike) -> "RunConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: config must be a flat JSON object")
        return cls.from_dict(d)


TOGGLES = ("region", "self_attn", "sgfe", "srfl", "collab")

# Cumulative component grid, in the order rows are added to the baseline.
ABLATION_ROWS = (
    ("Baseline", {}),
    ("+Region", {"region": True}),
    ("+SA", {"self_attn": True}),
    ("+SGFE", {"sgfe": True}),
    ("+SRFL", {"srfl": True}),
    ("+CL", {"collab": True}),
)


def ablation_configs(cfg: RunConfig) -> list[tuple[str, RunConfig]]:
    current = {k: False for k in TOGGLES}
    out = []
    for label, delta in ABLATION_ROWS:
        current.update(delta)
        out.append((label, cfg.replace(**current)))
    return out


def coerce(f: dataclasses.Field, value):
    """Convert a JSON/CLI/env value to the field's declared type."""
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        if kind == "bool":
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "on", "yes"):
                return True
            if text in ("0", "false", "off", "no"):
                return False
            raise ValueError(value)
        if kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{f.name}: cannot interpret {value!r} as {kind}") from None


PRESETS = {
    "default": RunConfig(),
    "coco-like": RunConfig(objects_per_image_mean=2.9, lambda2=0.8),
    "voc-like": RunConfig(objects_per_image_mean=1.5, lambda2=0.1),
    "nus-like": RunConfig(objects_per_image_mean=2.4, lambda2=2.0),
}
