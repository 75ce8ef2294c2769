"""Heterogeneous batch composition and per-sample target routing."""
import queue
import threading
from dataclasses import dataclass, field

import numpy as np

from ..hierloss import Targets
from ..pseudo_gt import BBOX, IMAGE_LEVEL, densify_sparse, sparse_root_gt, weak_pseudo_gt
from .dataset import PER_PIXEL
from .geometry import fit_and_crop

KIND_ORDER = (PER_PIXEL, BBOX, IMAGE_LEVEL)

# per-pixel, bbox, image-level images per batch
PRESETS = {
    "batch4": (1, 2, 1),
    "batch3": (1, 2, 0),
    "per_pixel_only": (1, 0, 0),
}


@dataclass
class BatchSpec:
    per_pixel: int = 1
    bbox: int = 2
    image_level: int = 1
    crop: tuple = (32, 32)
    seed: int = 0

    def __post_init__(self):
        self.crop = tuple(int(v) for v in self.crop)
        counts = self.counts()
        if min(counts.values()) < 0 or not any(counts.values()):
            raise ValueError(f"batch counts must be >= 0 with at least one positive: {counts}")

    def counts(self):
        return {PER_PIXEL: self.per_pixel, BBOX: self.bbox, IMAGE_LEVEL: self.image_level}

    @classmethod
    def preset(cls, name, **kw):
        pp, bb, il = PRESETS[name]
        return cls(pp, bb, il, **kw)


@dataclass
class Sample:
    image_id: str
    kind: str
    image: np.ndarray          # float64 (3, H, W) in [0, 1]
    targets: Targets
    annotations: list = field(default_factory=list)


def prepare_sample(record, taxonomy, crop, rng, dataset=None):
    """Crop a record to ``crop`` and generate its classifier targets."""
    if record.kind == PER_PIXEL:
        image, sparse = record.image, record.sparse
        if image.shape[1:] != tuple(crop):
            image, _, sparse, _ = fit_and_crop(image, [], crop, rng, mask=sparse)
        targets = Targets(
            PER_PIXEL,
            sparse_root_gt(sparse, taxonomy, dataset),
            {s: densify_sparse(sparse, s, taxonomy, dataset) for s in taxonomy.sub_ids},
        )
        return Sample(record.image_id, PER_PIXEL, np.asarray(image, dtype=np.float64) / 255.0, targets)
    image, anns, _, _ = fit_and_crop(record.image, record.annotations, crop, rng)
    targets = Targets(record.kind, None, weak_pseudo_gt(anns, tuple(crop), taxonomy, dataset))
    return Sample(record.image_id, record.kind, image / 255.0, targets, anns)


class BatchSampler:
    """Draws batches mixing supervision kinds per a :class:`BatchSpec`.

    Each dataset is walked in its own shuffled order; a new permutation starts
    when it is exhausted, independently of the other datasets.
    """

    def __init__(self, datasets, spec, taxonomy, dataset=None):
        self.datasets = datasets
        self.spec = spec
        self.taxonomy = taxonomy
        self.dataset = dataset
        for kind, n in spec.counts().items():
            if n > 0 and (kind not in datasets or len(datasets[kind]) == 0):
                raise ValueError(f"batch spec requests {kind} images but that dataset is empty")
        self.rng = np.random.default_rng(spec.seed)
        self._order = {}
        self._pos = {}
        self.epochs = {k: 0 for k in datasets}

    def _draw(self, kind):
        ds = self.datasets[kind]
        if kind not in self._order or self._pos[kind] >= len(ds):
            if kind in self._order:
                self.epochs[kind] += 1
            self._order[kind] = self.rng.permutation(len(ds))
            self._pos[kind] = 0
        rec = ds[int(self._order[kind][self._pos[kind]])]
        self._pos[kind] += 1
        return rec

    def next_batch(self):
        batch = []
        counts = self.spec.counts()
        for kind in KIND_ORDER:
            for _ in range(counts[kind]):
                batch.append(prepare_sample(self._draw(kind), self.taxonomy, self.spec.crop,
                                            self.rng, self.dataset))
        return batch

    def __iter__(self):
        while True:
            yield self.next_batch()


def prefetch(batches, depth):
    """Yield from ``batches`` with a worker thread running up to ``depth`` items ahead.

    Order is preserved, so the sequence is identical for every depth.
    """
    if depth <= 0:
        yield from batches
        return
    q = queue.Queue(maxsize=depth)
    done = object()
    stop = threading.Event()

    def work():
        try:
            for b in batches:
                while not stop.is_set():
                    try:
                        q.put(b, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
        finally:
            try:
                q.put(done, timeout=1.0)
            except queue.Full:
                pass

    t = threading.Thread(target=work, daemon=True)
    t.start()
    try:
        while True:
            item = q.get()
            if item is done:
                return
            yield item
    finally:
        stop.set()


def stack_images(samples):
    """Normalized network input ``[N, 3, H, W]``."""
    return (np.stack([s.image for s in samples]) - 0.5) / 0.25
