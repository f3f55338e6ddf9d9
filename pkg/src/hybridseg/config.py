"""Model and training configuration plus the flat ``key=value`` file format.

Keys in a config file mirror the dataclass fields.  Model fields take a
``model.`` prefix (``model.layers=2``); tuples are comma-separated
(``model.unet_widths=16,24,40,80``); booleans are ``true``/``false``.
Blank lines and lines starting with ``#`` are ignored.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 6
    feature_channels: int = 32
    # local path
    unet_widths: tuple = (16, 24, 40, 80)
    unet_depths: tuple = (1, 2, 2, 3)
    unet_kernels: tuple = (3, 3, 5, 3)
    skip_stages: tuple = (0, 1, 2)
    # MBConv
    expansion: float = 6.0
    se_ratio: float = 0.25
    use_se: bool = True
    # global path
    use_transformer: bool = True
    tr_stem: int = 16
    tr_widths: tuple = (16, 24, 32)
    tr_depths: tuple = (1, 1, 1)
    tr_kernels: tuple = (3, 5, 3)
    n_a: int = 6
    n_f: int = 32
    layers: int = 6
    heads: int = 4
    ff_multiplier: int = 2
    # output fusion heads
    head_n_a: int = 2
    head_n_f: int = 16
    head_layers: int = 6
    head_heads: int = 2
    head_split_channels: bool = False
    positive_threshold: float = 0.5

    def __post_init__(self):
        if self.use_transformer and self.tr_widths[-1] != self.feature_channels:
            raise ValueError("tr_widths[-1] must equal feature_channels so the two paths can be summed")
        if self.n_f % self.heads:
            raise ValueError(f"n_f={self.n_f} not divisible by heads={self.heads}")
        if self.feature_channels % self.heads:
            raise ValueError(f"feature_channels={self.feature_channels} not divisible by heads={self.heads}")
        if not 0 < self.positive_threshold < 1:
            raise ValueError("positive_threshold must lie in (0, 1)")

    def hash(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 4
    epochs: int = 30
    lr_drop_epochs: tuple = (25,)
    seed: int = 0
    patch: int = 64
    stride: int = 16
    val_every: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.base_lr <= 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("learning rate must be positive; momentum and weight decay non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        drops = list(self.lr_drop_epochs)
        if drops != sorted(set(drops)):
            raise ValueError(f"lr_drop_epochs must be strictly increasing, got {drops}")
        if drops and (drops[0] < 1 or drops[-1] >= self.epochs):
            raise ValueError(f"lr_drop_epochs {drops} must lie in 1..epochs-1 (epochs={self.epochs})")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def reference_train_config(**overrides) -> TrainConfig:
    """Full-size recipe: 256 px patches, stride 32, batch 10, 100 epochs, drops at 25 and 45."""
    base = dict(base_lr=0.01, momentum=0.9, weight_decay=0.0005, batch_size=10,
                epochs=100, lr_drop_epochs=(25, 45), patch=256, stride=32)
    base.update(overrides)
    return TrainConfig(**base)


TINY_MODEL = ModelConfig(unet_widths=(8, 12, 16, 24), unet_depths=(1, 1, 1, 1), feature_channels=16,
                         tr_stem=8, tr_widths=(8, 12, 16), n_f=16, layers=1, head_layers=1)


def smoke_train_config(**overrides) -> TrainConfig:
    """Tiny model on 32 px patches; fits a handful of 64 px synthetic scenes in minutes."""
    base = dict(base_lr=0.1, batch_size=4, epochs=30, lr_drop_epochs=(25,), patch=32, stride=10,
                model=TINY_MODEL)
    base.update(overrides)
    return TrainConfig(**base)


def _coerce(value: str, default):
    if isinstance(default, bool):
        low = value.strip().lower()
        if low not in ("true", "false", "1", "0"):
            raise ValueError(f"expected a boolean, got {value!r}")
        return low in ("true", "1")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        value = value.strip()
        return tuple(int(v) for v in value.split(",")) if value else ()
    return value


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    base = base or TrainConfig()
    train_fields = {f.name for f in fields(TrainConfig)} - {"model"}
    model_defaults = dataclasses.asdict(base.model)
    train_kw, model_kw = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("model."):
            name = key[6:]
            if name not in model_defaults:
                raise ValueError(f"line {lineno}: unknown model key {name!r}")
            model_kw[name] = _coerce(value, model_defaults[name])
        elif key in train_fields:
            train_kw[key] = _coerce(value, getattr(base, key))
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    model = dataclasses.replace(base.model, **model_kw)
    return dataclasses.replace(base, model=model, **train_kw)


def load_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for f in fields(TrainConfig):
        if f.name == "model":
            continue
        lines.append(f"{f.name}={_fmt(getattr(cfg, f.name))}")
    for f in fields(ModelConfig):
        lines.append(f"model.{f.name}={_fmt(getattr(cfg.model, f.name))}")
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)
