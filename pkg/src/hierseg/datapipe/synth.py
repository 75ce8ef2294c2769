"""Synthetic street-like scenes with exact masks, tight boxes and class lists.

Root classes without a subclassifier are "stuff" and fill the layout (the
first one above a random horizon, the rest in horizontal bands below it).
Subclasses are "things": textured rectangles (or ellipses, for odd-numbered
subclassifiers) pasted over the layout. All three supervision modes come from
the same scene, so their labels agree.
"""
from dataclasses import dataclass

import numpy as np

PATTERNS = ("hstripes", "vstripes", "checker", "dots", "diag", "solid")

# stuff colours; the domain-shift knob moves these
_STUFF_COLORS = np.array([
    [110, 150, 190],
    [90, 90, 95],
    [120, 160, 90],
    [160, 130, 100],
], dtype=np.float64)

_GROUP_COLORS = np.array([
    [200, 70, 60],
    [70, 90, 210],
    [210, 180, 60],
    [80, 190, 120],
], dtype=np.float64)


_SUB_OFFSETS = np.array([
    [0, 0, 0],
    [-45, 40, -30],
    [35, -25, 55],
    [-30, -40, 40],
], dtype=np.float64)


@dataclass
class Scene:
    image: np.ndarray       # uint8 (3, H, W)
    labels: np.ndarray      # uint8 (H, W) dataset label ids
    objects: list           # [(label id, (x0, y0, x1, y1))] of visible things
    instances: np.ndarray   # int (H, W) index into the pasted objects, -1 for stuff


@dataclass(frozen=True)
class Appearance:
    color: tuple
    pattern: str
    period: int


def thing_appearance(group_rank, sub_index):
    """Deterministic look of subclass ``sub_index`` of the ``group_rank``-th subclassifier."""
    base = _GROUP_COLORS[group_rank % len(_GROUP_COLORS)]
    # siblings differ in colour and texture; fine textures alone do not survive rescaling
    offset = _SUB_OFFSETS[sub_index % len(_SUB_OFFSETS)]
    color = tuple(np.clip(base + offset, 0, 255).tolist())
    return Appearance(color, PATTERNS[sub_index % len(PATTERNS)], 2 + sub_index % 2)


def _texture(pattern, period, h, w, phase):
    yy, xx = np.mgrid[0:h, 0:w]
    if pattern == "hstripes":
        t = ((yy + phase) // period) % 2
    elif pattern == "vstripes":
        t = ((xx + phase) // period) % 2
    elif pattern == "checker":
        t = (((yy + phase) // period) + ((xx + phase) // period)) % 2
    elif pattern == "dots":
        t = (((yy + phase) % (2 * period)) < 1) & (((xx + phase) % (2 * period)) < 1)
    elif pattern == "diag":
        t = ((xx + yy + phase) // period) % 2
    else:
        t = np.zeros((h, w))
    return t.astype(np.float64)


class SceneSampler:
    """Random scene generator bound to a taxonomy and one of its label maps.

    ``thing_probs`` maps subclass leaf names (``"vehicle/truck"``) to relative
    sampling frequencies (uniform when omitted). ``domain_shift`` in [0, 1]
    perturbs stuff colours and noise to emulate a dataset gap.
    """

    def __init__(self, taxonomy, dataset=None, thing_probs=None, domain_shift=0.0,
                 max_objects=4, noise=10.0):
        self.taxonomy = taxonomy
        self.dataset = dataset or taxonomy.default_dataset
        leaves = taxonomy.leaves
        self.stuff = [n for n in leaves if n.sub is None]
        self.things = [n for n in leaves if n.sub is not None]
        if not self.stuff:
            raise ValueError("taxonomy needs at least one root class without subclassifier")
        names = [taxonomy.node_name(n) for n in self.things]
        probs = np.ones(len(self.things))
        if thing_probs:
            unknown = set(thing_probs) - set(names)
            if unknown:
                raise ValueError(f"unknown thing classes {sorted(unknown)}")
            probs = np.array([float(thing_probs.get(n, 0.0)) for n in names])
        self.thing_probs = probs / probs.sum() if len(probs) else probs
        self.domain_shift = float(domain_shift)
        self.max_objects = max_objects
        self.noise = noise
        group_rank = {s: i for i, s in enumerate(taxonomy.sub_ids)}
        self.looks = {n: thing_appearance(group_rank[n.root], n.sub) for n in self.things}
        self.label_of = {n: taxonomy.label_id(n, self.dataset) for n in leaves}

    def sample(self, rng, size):
        h, w = size
        img = np.zeros((3, h, w))
        labels = np.zeros((h, w), dtype=np.uint8)
        instances = np.full((h, w), -1, dtype=np.int64)
        shift = self.domain_shift * rng.uniform(-60, 60, size=3)

        # first stuff class above the horizon, the others in bands below it
        horizon = int(rng.uniform(0.35, 0.55) * h)
        cuts = np.sort(rng.uniform(horizon, h, size=max(len(self.stuff) - 2, 0))).astype(int)
        edges = [0] + ([horizon] + cuts.tolist() if len(self.stuff) > 1 else []) + [h]
        for i, node in enumerate(self.stuff):
            y0, y1 = edges[i], edges[i + 1]
            col = _STUFF_COLORS[i % len(_STUFF_COLORS)] + shift
            img[:, y0:y1] = col[:, None, None]
            labels[y0:y1] = self.label_of[node]

        placed = []
        if self.things:
            for k in range(int(rng.integers(1, self.max_objects + 1))):
                node = self.things[int(rng.choice(len(self.things), p=self.thing_probs))]
                look = self.looks[node]
                upright = self.taxonomy.sub_ids.index(node.root) % 2 == 1
                oh = int(rng.integers(max(3, h // 5), max(4, h // 2)))
                ow = int(rng.integers(max(3, w // 5), max(4, w // 2)))
                if upright:
                    oh, ow = min(max(oh, ow), h), min(oh, ow)
                y0 = int(rng.integers(0, h - oh + 1))
                x0 = int(rng.integers(0, w - ow + 1))
                shape = np.ones((oh, ow), dtype=bool)
                if upright:
                    yy, xx = np.mgrid[0:oh, 0:ow]
                    shape = ((yy + 0.5 - oh / 2) / (oh / 2)) ** 2 + ((xx + 0.5 - ow / 2) / (ow / 2)) ** 2 <= 1.0
                tex = _texture(look.pattern, look.period, oh, ow, int(rng.integers(0, 4)))
                col = np.array(look.color)[:, None, None] * (0.55 + 0.45 * tex[None])
                img[:, y0:y0 + oh, x0:x0 + ow][:, shape] = col[:, shape]
                labels[y0:y0 + oh, x0:x0 + ow][shape] = self.label_of[node]
                instances[y0:y0 + oh, x0:x0 + ow][shape] = k
                placed.append(node)

        img += rng.normal(0.0, self.noise * (1.0 + self.domain_shift), size=img.shape)
        image = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        objects = []
        for k, node in enumerate(placed):
            m = instances == k
            if not m.any():  # fully occluded
                continue
            ys, xs = np.nonzero(m)
            rect = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
            objects.append((self.label_of[node], rect))
        return Scene(image, labels, objects, instances)
