"""Experiment configuration (YAML) with defaults resolved in one place."""
import copy
import os
from dataclasses import asdict, dataclass, field

import yaml

from .datapipe.batching import PRESETS, BatchSpec
from .hierloss import LossConfig
from .model import HierNetConfig


class ConfigError(ValueError):
    pass


@dataclass
class OptimizerConfig:
    lr: float = 0.02
    momentum: float = 0.9
    epochs: int = 26
    halvings: int = 3
    steps_per_epoch: int = 0   # 0: one pass over the per-pixel dataset

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("optimizer.lr must be > 0")
        if self.epochs < 1:
            raise ConfigError("optimizer.epochs must be >= 1")
        if self.halvings < 0 or self.steps_per_epoch < 0:
            raise ConfigError("optimizer.halvings and steps_per_epoch must be >= 0")


@dataclass
class ExperimentConfig:
    taxonomy: str = None        # path; None selects the bundled synthetic taxonomy
    label_map: str = None       # dataset label map inside the taxonomy
    model: HierNetConfig = field(default_factory=HierNetConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    batch: BatchSpec = field(default_factory=BatchSpec)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: dict = field(default_factory=dict)  # per_pixel / bbox / image_level / val -> dataset dir
    seed: int = 0
    out: str = None
    eval_batch: int = 8

    def to_dict(self):
        d = asdict(self)
        d["model"]["channels"] = list(d["model"]["channels"])
        d["batch"]["crop"] = list(d["batch"]["crop"])
        return d

    def dumps(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def check_paths(self, base="."):
        paths = dict(self.data)
        if self.taxonomy:
            paths["taxonomy"] = self.taxonomy
        for key, p in paths.items():
            if p and not os.path.exists(os.path.join(base, p)):
                raise ConfigError(f"{key}: path {p!r} does not exist")


_SECTIONS = {"model": HierNetConfig, "loss": LossConfig, "optimizer": OptimizerConfig}


def from_dict(raw):
    raw = copy.deepcopy(raw or {})
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    known = {f for f in ExperimentConfig.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    kw = {}
    for key, cls in _SECTIONS.items():
        sec = raw.pop(key, None) or {}
        try:
            kw[key] = cls(**sec)
        except TypeError as e:
            raise ConfigError(f"section {key!r}: {e}") from e
    batch = raw.pop("batch", None) or {}
    preset = batch.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown batch preset {preset!r}; choose from {sorted(PRESETS)}")
        pp, bb, il = PRESETS[preset]
        batch = {"per_pixel": pp, "bbox": bb, "image_level": il, **batch}
    try:
        kw["batch"] = BatchSpec(**batch)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"section 'batch': {e}") from e
    kw.update(raw)
    return ExperimentConfig(**kw)


def loads(text):
    return from_dict(yaml.safe_load(text))


def load(path):
    with open(path) as f:
        return loads(f.read())
