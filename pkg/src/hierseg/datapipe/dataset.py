"""Dataset records, synthetic dataset generation and the on-disk layout.

Layout of a dataset directory::

    manifest.json        mode, count, seed, image size, label map name
    annotations.jsonl    {"image_id", "size": [H, W], "annotations": [{kind, class, rect}]}
    images/<id>.ppm
    masks/<id>.pgm       per_pixel mode only; pixel value = dataset label id, 255 = void
"""
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from PIL import Image

from ..pseudo_gt import BBOX, IMAGE_LEVEL, WeakAnnotation
from .synth import SceneSampler

PER_PIXEL = "per_pixel"
MODES = (PER_PIXEL, BBOX, IMAGE_LEVEL)
WEAK_ASPECTS = (0.75, 1.0, 1.5, 2.0)


@dataclass
class SampleRecord:
    image_id: str
    image: np.ndarray                 # uint8 (3, H, W)
    kind: str
    sparse: Optional[np.ndarray] = None   # (H, W) dataset label ids, per_pixel only
    annotations: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in MODES:
            raise ValueError(f"unknown supervision kind {self.kind!r}")
        if (self.kind == PER_PIXEL) != (self.sparse is not None):
            raise ValueError(f"{self.kind} record: sparse labels must be present iff per_pixel")
        if self.kind == PER_PIXEL and self.annotations:
            raise ValueError("per_pixel record carries no weak annotations")

    @property
    def size(self):
        return self.image.shape[1:]


class Dataset:
    def __init__(self, records, mode, meta=None):
        self.records = list(records)
        self.mode = mode
        self.meta = dict(meta or {})

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def subset(self, n):
        return Dataset(self.records[:n], self.mode, dict(self.meta, count=min(n, len(self))))


def scene_to_record(scene, image_id, mode):
    if mode == PER_PIXEL:
        return SampleRecord(image_id, scene.image, PER_PIXEL, sparse=scene.labels.astype(np.int64))
    if mode == BBOX:
        anns = [WeakAnnotation(BBOX, lid, rect) for lid, rect in scene.objects]
    else:
        present = sorted({lid for lid, _ in scene.objects})
        anns = [WeakAnnotation(IMAGE_LEVEL, lid) for lid in present]
    return SampleRecord(image_id, scene.image, mode, annotations=anns)


def generate_records(taxonomy, n_images, mode, seed, size=(32, 32), dataset=None, **sampler_kw):
    """Build ``n_images`` synthetic records in memory.

    Per-pixel images have exactly ``size``; weak images get a random aspect
    ratio around it so the fit-and-crop step has work to do.
    """
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    sampler = SceneSampler(taxonomy, dataset, **sampler_kw)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_images):
        if mode == PER_PIXEL:
            hw = tuple(size)
        else:
            aspect = WEAK_ASPECTS[int(rng.integers(len(WEAK_ASPECTS)))]
            h = int(round(size[0] * rng.uniform(0.8, 1.2)))
            hw = (h, max(8, int(round(h * aspect * size[1] / size[0]))))
        records.append(scene_to_record(sampler.sample(rng, hw), f"{mode}_{i:06d}", mode))
    return Dataset(records, mode, {"mode": mode, "count": n_images, "seed": seed,
                                   "size": list(size), "label_map": sampler.dataset})


def write_dataset(ds, out_dir):
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    if ds.mode == PER_PIXEL:
        os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    with open(os.path.join(out_dir, "annotations.jsonl"), "w") as f:
        for r in ds.records:
            rec = {"image_id": r.image_id, "size": list(r.size),
                   "annotations": [a.to_json() for a in r.annotations]}
            f.write(json.dumps(rec, sort_keys=True) + "\n")
            Image.fromarray(np.ascontiguousarray(r.image.transpose(1, 2, 0))).save(
                os.path.join(out_dir, "images", f"{r.image_id}.ppm"), format="PPM")
            if r.sparse is not None:
                Image.fromarray(r.sparse.astype(np.uint8)).save(
                    os.path.join(out_dir, "masks", f"{r.image_id}.pgm"), format="PPM")
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(dict(ds.meta, count=len(ds)), f, indent=2, sort_keys=True)


def synth_generate(taxonomy, n_images, mode, seed, out_dir, size=(32, 32), **sampler_kw):
    ds = generate_records(taxonomy, n_images, mode, seed, size, **sampler_kw)
    write_dataset(ds, out_dir)
    return ds


def read_annotations(path):
    """Yield ``(image_id, (H, W), [WeakAnnotation])`` from an annotations.jsonl file."""
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                anns = [WeakAnnotation.from_json(a) for a in rec.get("annotations", [])]
                h, w = rec["size"]
            except (ValueError, KeyError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: {e}") from e
            anns = [clamp_annotation(a, h, w) for a in anns]
            for a in anns:
                a.check_bounds(h, w)
            yield rec["image_id"], (int(h), int(w)), anns


def clamp_annotation(a, h, w):
    """Clip a box to the image; degenerate results are caught by ``check_bounds``."""
    if a.kind != BBOX:
        return a
    x0, y0, x1, y1 = a.rect
    return WeakAnnotation(BBOX, a.cls, (min(max(x0, 0), w), min(max(y0, 0), h),
                                        min(max(x1, 0), w), min(max(y1, 0), h)))


def load_dataset(path):
    with open(os.path.join(path, "manifest.json")) as f:
        meta = json.load(f)
    mode = meta["mode"]
    records = []
    for image_id, (h, w), anns in read_annotations(os.path.join(path, "annotations.jsonl")):
        img = np.asarray(Image.open(os.path.join(path, "images", f"{image_id}.ppm")).convert("RGB"))
        img = np.ascontiguousarray(img.transpose(2, 0, 1))
        if img.shape[1:] != (h, w):
            raise ValueError(f"{image_id}: image is {img.shape[1:]}, annotations say {(h, w)}")
        sparse = None
        if mode == PER_PIXEL:
            sparse = np.asarray(Image.open(os.path.join(path, "masks", f"{image_id}.pgm"))).astype(np.int64)
        records.append(SampleRecord(image_id, img, mode, sparse=sparse, annotations=anns))
    return Dataset(records, mode, meta)
