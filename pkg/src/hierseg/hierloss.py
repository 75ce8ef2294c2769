"""Hierarchical loss: root sparse CCE, subclassifier dense CCE, conditional weak CCE.

Loss routing per supervision type:

=================  ===============  =======================
classifier         per-pixel data   weak data (bbox / image)
=================  ===============  =======================
root               sparse CCE       --
each subclassifier dense CCE        conditional dense CCE
=================  ===============  =======================

``total = root + coef * sum(subclassifier terms) + weight_decay * sum(||w||^2)``
"""
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .pseudo_gt import DenseLabelMap
from .taxonomy import VOID
from .tensor import ShapeError, Tensor, _record, add, scale, sum_squares

PER_PIXEL = "per_pixel"
_TINY = 1e-300


@dataclass
class LossConfig:
    sub_coef: float = 0.1
    weight_decay: float = 0.00017

    def __post_init__(self):
        if self.sub_coef < 0 or self.weight_decay < 0:
            raise ValueError("loss coefficients must be non-negative")


@dataclass
class Targets:
    """Per-sample supervision as routed to the classifiers.

    ``root`` is the root-class sparse map for per-pixel samples and ``None``
    for weak ones; ``subs`` holds one DenseLabelMap per subclassifier.
    """
    kind: str
    root: Optional[np.ndarray]
    subs: dict

    def __post_init__(self):
        if (self.kind == PER_PIXEL) != (self.root is not None):
            raise ValueError(f"{self.kind} sample: root ground truth must be present iff per-pixel")


@dataclass
class LossBreakdown:
    root: float
    sub_strong: dict
    sub_weak: dict
    reg: float
    total: float
    counts: dict = field(default_factory=dict)
    root_missing: bool = False

    @property
    def sub(self):
        return {k: self.sub_strong[k] + self.sub_weak[k] for k in self.sub_strong}

    def to_json(self, **extra):
        d = dict(extra)
        d.update(asdict(self))
        return d


def sparse_cce(softmax, gt):
    """Mean ``-log sigma[label]`` over non-VOID pixels.

    ``softmax`` is an ``[N, n, H, W]`` Tensor, ``gt`` an ``[N, H, W]`` integer
    array. Returns ``(loss Tensor, pixel count)``; an all-VOID map gives 0.
    """
    s = softmax.data
    n = s.shape[1]
    if gt.shape != s.shape[:1] + s.shape[2:]:
        raise ShapeError("sparse_cce", "gt shape", s.shape[:1] + s.shape[2:], gt.shape)
    valid = gt != VOID
    count = int(valid.sum())
    if count == 0:
        return Tensor(np.zeros(1)), 0
    labels = gt[valid]
    if labels.max() >= n or labels.min() < 0:
        raise ValueError(f"sparse_cce: label {int(labels.max())} out of range for {n} classes")
    ni, hi, wi = np.nonzero(valid)
    picked = s[ni, labels, hi, wi]
    out = Tensor(np.array([-np.log(np.maximum(picked, _TINY)).sum() / count]))

    def backward(g):
        grad = np.zeros_like(s)
        grad[ni, labels, hi, wi] = -g[0] / (count * np.maximum(picked, _TINY))
        return (grad,)

    return _record("sparse_cce", (softmax,), out, backward), count


def dense_cce(softmax, probs, mask):
    """Mean ``-sum_c y_c log sigma_c`` over masked pixels.

    ``probs`` is ``[N, n, H, W]`` and ``mask`` ``[N, H, W]`` boolean.
    Returns ``(loss Tensor, pixel count)``; an empty mask gives 0.
    """
    s = softmax.data
    if probs.shape != s.shape:
        raise ShapeError("dense_cce", "gt shape", s.shape, probs.shape)
    if mask.shape != s.shape[:1] + s.shape[2:]:
        raise ShapeError("dense_cce", "mask shape", s.shape[:1] + s.shape[2:], mask.shape)
    count = int(mask.sum())
    if count == 0:
        return Tensor(np.zeros(1)), 0
    y = np.where(mask[:, None], probs, 0.0)
    active = y > 0
    logs = np.log(np.maximum(s, _TINY), where=active, out=np.zeros_like(s))
    out = Tensor(np.array([-(y * logs).sum() / count]))

    def backward(g):
        grad = np.zeros_like(s)
        np.divide(-g[0] * y, count * np.maximum(s, _TINY), out=grad, where=active)
        return (grad,)

    return _record("dense_cce", (softmax,), out, backward), count


def weak_condition_mask(root_softmax, pseudo_gt, sub, taxonomy):
    """Pixels where a weak sample may supervise subclassifier ``sub``.

    True where the pseudo ground truth carries mass for this subclassifier and
    the root classifier's argmax is the root class owning it. ``root_softmax``
    is an ``[R, H, W]`` array.
    """
    taxonomy.n_sub(sub)
    if root_softmax.shape[1:] != pseudo_gt.coverage.shape:
        raise ShapeError("weak_condition_mask", "H, W", pseudo_gt.coverage.shape, root_softmax.shape[1:])
    has_mass = pseudo_gt.coverage & (pseudo_gt.probs.sum(axis=0) > 0)
    return has_mass & (np.argmax(root_softmax, axis=0) == sub)


def _stack_dense(maps, n, shape):
    probs = np.zeros((len(maps), n) + shape)
    cov = np.zeros((len(maps),) + shape, dtype=bool)
    for i, m in enumerate(maps):
        if m is not None:
            probs[i] = m.probs
            cov[i] = m.coverage
    return probs, cov


def total_loss(output, targets, taxonomy, cfg, weights=()):
    """Hierarchical loss over a batch.

    ``output`` is a SegmentationOutput for the whole batch, ``targets`` a list
    of :class:`Targets` in the same order, ``weights`` the tensors subject to
    L2 regularization. Pixel sets are pooled across the batch before
    normalizing. Returns ``(loss Tensor, LossBreakdown)``.
    """
    if not targets:
        raise ValueError("total_loss: empty batch")
    n_batch, _, h, w = output.root.shape
    if len(targets) != n_batch:
        raise ShapeError("total_loss", "batch size", n_batch, len(targets))

    root_gt = np.full((n_batch, h, w), VOID, dtype=np.int64)
    strong = [t.kind == PER_PIXEL for t in targets]
    for i, t in enumerate(targets):
        if t.root is not None:
            root_gt[i] = t.root
    root_term, root_count = sparse_cce(output.root, root_gt)
    counts = {"root": root_count}

    terms = [root_term]
    sub_strong, sub_weak = {}, {}
    sub_terms = []
    for sub in taxonomy.sub_ids:
        name = taxonomy.sub_name(sub)
        n = taxonomy.n_sub(sub)
        maps = [t.subs.get(sub) for t in targets]
        probs, cov = _stack_dense(maps, n, (h, w))
        strong_mask = cov & np.array(strong)[:, None, None]
        weak_mask = np.zeros_like(cov)
        for i, t in enumerate(targets):
            if not strong[i] and maps[i] is not None:
                weak_mask[i] = weak_condition_mask(output.root.data[i], maps[i], sub, taxonomy)
        field_ = output.subs[sub]
        ls, cs = dense_cce(field_, probs, strong_mask)
        lw, cw = dense_cce(field_, probs, weak_mask)
        sub_strong[name], sub_weak[name] = float(ls.data[0]), float(lw.data[0])
        counts[f"{name}.strong"], counts[f"{name}.weak"] = cs, cw
        sub_terms += [ls, lw]

    if sub_terms:
        terms.append(scale(add(*sub_terms), cfg.sub_coef))
    weights = list(weights)
    if weights:
        reg_term = sum_squares(weights, cfg.weight_decay)
        terms.append(reg_term)
        reg = float(reg_term.data[0])
    else:
        reg = 0.0
    loss = add(*terms)
    breakdown = LossBreakdown(
        root=float(root_term.data[0]),
        sub_strong=sub_strong,
        sub_weak=sub_weak,
        reg=reg,
        total=float(loss.data[0]),
        counts=counts,
        root_missing=not any(strong),
    )
    return loss, breakdown


__all__ = [
    "LossConfig", "LossBreakdown", "Targets", "PER_PIXEL", "DenseLabelMap",
    "sparse_cce", "dense_cce", "weak_condition_mask", "total_loss",
]
