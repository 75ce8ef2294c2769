"""Dense per-pixel pseudo ground truth from weak and sparse labels.

Weak annotations vote: every bounding box adds one vote for its class to each
pixel inside it, an image-level label adds one vote everywhere. Votes are then
normalized per pixel into a categorical distribution over one subclassifier's
classes; pixels without any vote are marked uncovered.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import checkpoint, kernels
from .taxonomy import VOID, TaxonomyError

BBOX = "bbox"
IMAGE_LEVEL = "image_level"


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class WeakAnnotation:
    kind: str
    cls: int
    rect: Optional[tuple] = None  # (x_min, y_min, x_max, y_max), max exclusive

    def __post_init__(self):
        if self.kind == BBOX:
            if self.rect is None or len(self.rect) != 4:
                raise AnnotationError("bbox annotation needs a 4-tuple rect")
            object.__setattr__(self, "rect", tuple(int(v) for v in self.rect))
        elif self.kind == IMAGE_LEVEL:
            if self.rect is not None:
                raise AnnotationError("image-level annotation carries no rect")
        else:
            raise AnnotationError(f"unknown annotation kind {self.kind!r}")

    def check_bounds(self, height, width):
        if self.kind != BBOX:
            return
        x0, y0, x1, y1 = self.rect
        if not (0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height):
            raise AnnotationError(f"degenerate or out-of-bounds rect {self.rect} for {height}x{width} image")

    def to_json(self):
        d = {"kind": self.kind, "class": self.cls}
        if self.rect is not None:
            d["rect"] = list(self.rect)
        return d

    @classmethod
    def from_json(cls, d):
        rect = d.get("rect")
        return cls(d["kind"], int(d["class"]), tuple(rect) if rect is not None else None)


@dataclass
class DenseLabelMap:
    probs: np.ndarray     # (n, H, W) float64
    coverage: np.ndarray  # (H, W) bool

    @property
    def n_classes(self):
        return self.probs.shape[0]

    @classmethod
    def empty(cls, n, height, width):
        return cls(np.zeros((n, height, width)), np.zeros((height, width), dtype=bool))


def vote_dense_gt(annotations, image_size, target, taxonomy, dataset=None):
    """Vote-and-normalize pseudo ground truth for subclassifier ``target``.

    Every annotation must map to ``target``; filtering is the caller's job
    (see :func:`weak_pseudo_gt`).
    """
    h, w = image_size
    n = taxonomy.n_sub(target)
    if not annotations:
        return DenseLabelMap.empty(n, h, w)
    classes = np.empty(len(annotations), dtype=np.int64)
    rects = np.empty((len(annotations), 4), dtype=np.int64)
    for i, a in enumerate(annotations):
        sub, idx = taxonomy.weak_label_target(a.cls, dataset)
        if sub != target:
            raise AnnotationError(
                f"annotation class {a.cls} belongs to subclassifier {sub}, not {target}")
        a.check_bounds(h, w)
        classes[i] = idx
        rects[i] = a.rect if a.kind == BBOX else (0, 0, w, h)
    counts = kernels.vote_counts(classes, rects, n, h, w)
    total = counts.sum(axis=0)
    coverage = total > 0
    probs = np.zeros((n, h, w))
    np.divide(counts, total, out=probs, where=coverage[None])
    return DenseLabelMap(probs, coverage)


def weak_pseudo_gt(annotations, image_size, taxonomy, dataset=None):
    """Pseudo ground truth for every subclassifier of ``taxonomy``.

    Annotations whose class does not land in any subclassifier are dropped.
    Returns ``{sub id: DenseLabelMap}``.
    """
    per_sub = {s: [] for s in taxonomy.sub_ids}
    for a in annotations:
        try:
            sub, _ = taxonomy.weak_label_target(a.cls, dataset)
        except TaxonomyError:
            continue
        per_sub[sub].append(a)
    return {s: vote_dense_gt(anns, image_size, s, taxonomy, dataset) for s, anns in per_sub.items()}


def densify_sparse(sparse, sub, taxonomy, dataset=None):
    """One-hot dense labels for the pixels whose class is a subclass of ``sub``."""
    n = taxonomy.n_sub(sub)
    idx = taxonomy.sub_lut(sub, dataset)[sparse]
    coverage = idx >= 0
    probs = (np.arange(n)[:, None, None] == idx[None]).astype(np.float64)
    return DenseLabelMap(probs, coverage)


def sparse_root_gt(sparse, taxonomy, dataset=None):
    """Project dataset labels onto root classes; VOID stays VOID."""
    return taxonomy.root_lut(dataset)[sparse]


def dumps_dense_gt(maps, taxonomy):
    """Serialize ``{sub: DenseLabelMap}`` to (HSEG bytes, HCOV bytes)."""
    probs = {taxonomy.sub_name(s): maps[s].probs for s in sorted(maps)}
    cov = {taxonomy.sub_name(s): maps[s].coverage for s in sorted(maps)}
    return checkpoint.dumps(probs), checkpoint.dumps_coverage(cov)


def loads_dense_gt(probs_buf, cov_buf, taxonomy):
    probs = checkpoint.loads(probs_buf)
    cov = checkpoint.loads_coverage(cov_buf)
    out = {}
    for s in taxonomy.sub_ids:
        name = taxonomy.sub_name(s)
        out[s] = DenseLabelMap(probs[name], cov[name])
    return out


__all__ = [
    "BBOX", "IMAGE_LEVEL", "VOID", "WeakAnnotation", "DenseLabelMap", "AnnotationError",
    "vote_dense_gt", "weak_pseudo_gt", "densify_sparse", "sparse_root_gt",
    "dumps_dense_gt", "loads_dense_gt",
]
