"""Training loop, evaluation and run artifacts."""
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import checkpoint
from .datapipe.batching import BatchSampler, stack_images
from .datapipe.dataset import PER_PIXEL
from .hierloss import total_loss
from .metrics import ConfusionMatrix, epoch_average
from .model import build, predict
from .optim import halving_schedule, sgd_step
from .tensor import Tape

log = logging.getLogger(__name__)


class RunError(RuntimeError):
    pass


def with_seed(cfg, seed):
    """Copy of ``cfg`` whose model init and batch order derive from ``seed``."""
    return replace(cfg, seed=seed, model=replace(cfg.model, seed=seed),
                   batch=replace(cfg.batch, seed=seed + 1))


def evaluate(net, val, taxonomy, dataset=None, batch_size=8):
    """Confusion matrix over leaf classes for a per-pixel dataset."""
    lut = taxonomy.leaf_lut(dataset)
    cm = ConfusionMatrix(len(taxonomy.leaves))
    for start in range(0, len(val), batch_size):
        recs = val.records[start:start + batch_size]
        x = (np.stack([r.image for r in recs]) / 255.0 - 0.5) / 0.25
        pred = predict(net.forward(x), taxonomy)
        for r, p in zip(recs, pred):
            cm.accumulate(lut[r.sparse], p)
    return cm


def epoch_metrics(cm, taxonomy):
    subset = taxonomy.subclass_leaf_indices()
    return {
        "miou": cm.miou(),
        "macc": cm.macc(),
        "sub_miou": cm.miou(subset),
        "sub_macc": cm.macc(subset),
        "iou": [None if np.isnan(v) else float(v) for v in cm.per_class_iou()],
        "acc": [None if np.isnan(v) else float(v) for v in cm.per_class_acc()],
    }


@dataclass
class TrainResult:
    net: object
    history: list
    report: dict
    lr_schedule: list
    losses: list = field(default_factory=list)
    state: dict = field(default_factory=dict)


def steps_per_epoch(cfg, datasets):
    if cfg.optimizer.steps_per_epoch:
        return cfg.optimizer.steps_per_epoch
    counts = cfg.batch.counts()
    # an epoch is one pass over the per-pixel set (or the first requested set)
    for kind in (PER_PIXEL, "bbox", "image_level"):
        if counts[kind] > 0:
            return math.ceil(len(datasets[kind]) / counts[kind])
    raise RunError("batch spec requests no images")


def train(cfg, taxonomy, datasets, val=None, log_fn=None, resume=None):
    """Run the epoch loop; returns :class:`TrainResult`.

    ``datasets`` maps supervision kind to Dataset. ``log_fn`` receives one
    dict per step (the loss breakdown). ``resume`` is a checkpoint path.
    """
    net = build(cfg.model, taxonomy)
    state = {}
    start_epoch = 0
    if resume is not None:
        if not os.path.exists(resume):
            raise RunError(f"cannot resume: checkpoint {resume!r} not found")
        start_epoch, state = load_training_state(resume, net)
    used = {k: v for k, v in datasets.items() if cfg.batch.counts().get(k, 0) > 0}
    sampler = BatchSampler(used, cfg.batch, taxonomy, cfg.label_map)
    n_steps = steps_per_epoch(cfg, used)
    schedule = halving_schedule(cfg.optimizer.lr, cfg.optimizer.epochs, cfg.optimizer.halvings)
    weights = net.weights()
    names = list(net.params)
    history, losses = [], []
    step = start_epoch * n_steps
    for epoch in range(start_epoch, cfg.optimizer.epochs):
        lr = schedule[epoch]
        for _ in range(n_steps):
            batch = sampler.next_batch()
            net.zero_grad()
            with Tape() as tape:
                out = net.forward(stack_images(batch))
                loss, bd = total_loss(out, [s.targets for s in batch], taxonomy, cfg.loss, weights)
            tape.backward(loss)
            grads = net.grads()
            params = {k: net.params[k].data for k in names}
            # L2 is already part of the loss gradient
            sgd_step(params, grads, state, lr, cfg.optimizer.momentum, weight_decay=0.0)
            losses.append(bd.total)
            if not np.isfinite(bd.total):
                raise RunError(f"non-finite loss at step {step}")
            if log_fn is not None:
                log_fn(bd.to_json(step=step, epoch=epoch, lr=lr))
            step += 1
        if val is not None:
            m = epoch_metrics(evaluate(net, val, taxonomy, cfg.label_map, cfg.eval_batch), taxonomy)
            m.update(epoch=epoch, lr=lr)
            history.append(m)
            log.info("epoch %d lr %.4g mIoU %.4f sub mIoU %.4f", epoch, lr, m["miou"], m["sub_miou"])
    report = final_report(history, taxonomy) if history else {}
    return TrainResult(net, history, report, schedule, losses, state)


def final_report(history, taxonomy, last=3):
    last = min(last, len(history))
    avg = epoch_average(history, last, keys=["miou", "macc", "sub_miou", "sub_macc"])
    per_class = {}
    for key in ("iou", "acc"):
        cols = list(zip(*[h[key] for h in history[-last:]]))
        per_class[key] = [None if any(v is None for v in col) else float(np.mean(col)) for col in cols]
    return {
        "averaged_epochs": last,
        "classes": taxonomy.leaf_names,
        "subclass_indices": taxonomy.subclass_leaf_indices(),
        **avg,
        **per_class,
        "history": history,
    }


def save_training_state(path, net, state, epoch):
    tensors = {f"param.{k}": v for k, v in net.state_dict().items()}
    tensors.update({f"momentum.{k}": v for k, v in state.items()})
    tensors["meta.epoch"] = np.array([float(epoch)])
    checkpoint.save(path, tensors)


def load_training_state(path, net):
    t = checkpoint.load(path)
    net.load_state_dict({k[6:]: v for k, v in t.items() if k.startswith("param.")})
    state = {k[9:]: v.copy() for k, v in t.items() if k.startswith("momentum.")}
    epoch = int(t["meta.epoch"][0]) + 1 if "meta.epoch" in t else 0
    return epoch, state


class RunLock:
    """Exclusive ownership of an output directory via a lock file."""

    def __init__(self, out_dir):
        self.path = os.path.join(out_dir, ".lock")

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunError(f"output directory is locked by another run ({self.path})") from None
        with os.fdopen(fd, "w") as f:
            f.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        os.remove(self.path)
        return False


def run_training(cfg, taxonomy, datasets, val, out_dir, resume=None):
    """Train and write checkpoint, step log, metrics report and effective config."""
    os.makedirs(out_dir, exist_ok=True)
    with RunLock(out_dir):
        with open(os.path.join(out_dir, "train_log.jsonl"), "w") as logf:
            result = train(cfg, taxonomy, datasets, val, resume=resume,
                           log_fn=lambda d: logf.write(json.dumps(d, sort_keys=True) + "\n"))
        save_training_state(os.path.join(out_dir, "checkpoint.hseg"), result.net, result.state,
                            cfg.optimizer.epochs - 1)
        with open(os.path.join(out_dir, "metrics.json"), "w") as f:
            json.dump(result.report, f, indent=2, sort_keys=True)
        with open(os.path.join(out_dir, "effective_config.yaml"), "w") as f:
            f.write(cfg.dumps())
        with open(os.path.join(out_dir, "manifest.json"), "w") as f:
            json.dump({"lr_schedule": result.lr_schedule, "seed": cfg.seed,
                       "steps_per_epoch": steps_per_epoch(cfg, {k: v for k, v in datasets.items()
                                                                if cfg.batch.counts().get(k, 0) > 0}),
                       "halving_epochs": _halving_epochs(result.lr_schedule)},
                      f, indent=2, sort_keys=True)
    return result


def _halving_epochs(schedule):
    return [e for e in range(1, len(schedule)) if schedule[e] != schedule[e - 1]]
