"""Weak-set-size study on synthetic data.

Trains the hierarchical network on a small per-pixel set in which some
subclasses are rare, plus a bounding-box set of varying size drawn with
uniform subclass frequencies and a mild domain shift. Reports mean subclass
mIoU (averaged over the last three epochs) per weak-set size and seed.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig, OptimizerConfig
from .datapipe.batching import BatchSpec
from .datapipe.dataset import PER_PIXEL, generate_records
from .hierloss import LossConfig
from .model import HierNetConfig
from .taxonomy import default_taxonomy
from .trainer import train, with_seed

log = logging.getLogger(__name__)

# per-pixel training scenes: trucks and riders are rare
STRONG_THING_PROBS = {
    "vehicle/car": 1.0, "vehicle/bus": 0.35, "vehicle/truck": 0.08,
    "human/person": 1.0, "human/rider": 0.08,
}


@dataclass
class StudySettings:
    weak_sizes: dict = field(default_factory=lambda: {"0": 0, "small": 40, "large": 600})
    seeds: tuple = (0, 1, 2, 3, 4)
    n_per_pixel: int = 48
    n_val: int = 48
    crop: tuple = (32, 32)
    domain_shift: float = 0.2
    epochs: int = 40
    lr: float = 0.02
    model: HierNetConfig = field(default_factory=lambda: HierNetConfig((8, 16, 16, 16), 12, 4))
    loss: LossConfig = field(default_factory=LossConfig)


def build_data(taxonomy, settings, seed):
    """Per-pixel train, balanced per-pixel val, and the largest bbox set for ``seed``."""
    base = 1000 * seed
    strong = generate_records(taxonomy, settings.n_per_pixel, PER_PIXEL, base + 1, settings.crop,
                              thing_probs=STRONG_THING_PROBS)
    val = generate_records(taxonomy, settings.n_val, PER_PIXEL, base + 2, settings.crop)
    n_weak = max(settings.weak_sizes.values())
    weak = generate_records(taxonomy, n_weak, "bbox", base + 3, settings.crop,
                            domain_shift=settings.domain_shift) if n_weak else None
    return strong, val, weak


def run_one(taxonomy, settings, seed, n_weak, data=None):
    strong, val, weak = data or build_data(taxonomy, settings, seed)
    spec = BatchSpec(1, 2 if n_weak else 0, 0, settings.crop)
    cfg = ExperimentConfig(
        model=settings.model, loss=settings.loss, batch=spec,
        optimizer=OptimizerConfig(lr=settings.lr, epochs=settings.epochs),
    )
    cfg = with_seed(cfg, seed)
    datasets = {PER_PIXEL: strong}
    if n_weak:
        datasets["bbox"] = weak.subset(n_weak)
    return train(cfg, taxonomy, datasets, val).report


def weak_size_study(settings=None, taxonomy=None, progress=None):
    """Return ``{size name: [report per seed]}``."""
    settings = settings or StudySettings()
    taxonomy = taxonomy or default_taxonomy()
    out = {name: [] for name in settings.weak_sizes}
    for seed in settings.seeds:
        data = build_data(taxonomy, settings, seed)
        for name, n in settings.weak_sizes.items():
            rep = run_one(taxonomy, settings, seed, n, data)
            out[name].append(rep)
            if progress:
                progress(name, seed, rep)
    return out


def summarize(results):
    return {name: float(np.mean([r["sub_miou"] for r in reps])) for name, reps in results.items()}
