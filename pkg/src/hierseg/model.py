"""Toy hierarchical fully convolutional network.

A shared conv/relu stack downsamples the input by ``downsample``; every
classifier (the root and one per subclassifier) owns an adaptation block
(1x1 conv, relu, 3x3 conv, relu) and a 1x1 head. Head logits are bilinearly
upsampled to input resolution and softmaxed over classes.
"""
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, conv2d, relu, softmax, upsample


class ConfigError(ValueError):
    pass


@dataclass
class HierNetConfig:
    channels: tuple = (8, 16, 16, 16)
    adapt_width: int = 12
    downsample: int = 4
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if not self.channels or min(self.channels) < 1 or self.adapt_width < 1:
            raise ConfigError("channel widths must be >= 1")
        d = self.downsample
        if d < 1 or d & (d - 1):
            raise ConfigError(f"downsample must be a power of two, got {d}")
        if len(self.channels) - 1 < self.n_strided:
            raise ConfigError(
                f"downsample {d} needs at least {self.n_strided + 1} backbone stages")

    @property
    def n_strided(self):
        return int(self.downsample).bit_length() - 1

    def strides(self):
        # first stage keeps resolution; the next n_strided stages halve it
        return [1] + [2 if i < self.n_strided else 1 for i in range(len(self.channels) - 1)]


@dataclass
class SegmentationOutput:
    root: Tensor                     # softmax [N, R, H, W]
    subs: dict                       # sub id -> softmax [N, n, H, W]
    root_logits: Tensor = None
    sub_logits: dict = field(default_factory=dict)


def param_count(cfg, taxonomy):
    """Closed-form number of scalar parameters for ``cfg`` under ``taxonomy``."""
    total, cin = 0, 3
    for c in cfg.channels:
        total += 9 * cin * c + c
        cin = c
    w = cfg.adapt_width
    heads = [taxonomy.n_roots] + [taxonomy.n_sub(s) for s in taxonomy.sub_ids]
    for n in heads:
        total += (cin * w + w) + (9 * w * w + w) + (w * n + n)
    return total


class HierNet:
    def __init__(self, cfg, taxonomy, params):
        self.cfg = cfg
        self.taxonomy = taxonomy
        self.params = params

    @property
    def classifier_prefixes(self):
        return ["root"] + [f"sub.{self.taxonomy.sub_name(s)}" for s in self.taxonomy.sub_ids]

    def weights(self):
        """Parameters subject to L2 regularization (convolution kernels, not biases)."""
        return [p for k, p in self.params.items() if k.endswith(".w")]

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def grads(self):
        return {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for k, p in self.params.items()}

    def state_dict(self):
        return {k: p.data for k, p in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters {sorted(missing)}")
        for k, p in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"parameter {k!r}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()

    def _head(self, prefix, feats, n_out):
        p = self.params
        a = relu(conv2d(feats, p[f"{prefix}.adapt1.w"], p[f"{prefix}.adapt1.b"]))
        a = relu(conv2d(a, p[f"{prefix}.adapt2.w"], p[f"{prefix}.adapt2.b"]))
        logits = conv2d(a, p[f"{prefix}.head.w"], p[f"{prefix}.head.b"])
        logits = upsample(logits, self.cfg.downsample)
        return logits, softmax(logits)

    def forward(self, images):
        """Run the network on ``[N, 3, H, W]`` (or a single ``[3, H, W]``) images."""
        x = images if isinstance(images, Tensor) else Tensor(images)
        if x.data.ndim == 3:
            x = Tensor(x.data[None])
        if x.data.ndim != 4 or x.shape[1] != 3:
            raise ConfigError(f"expected [N, 3, H, W] images, got shape {x.shape}")
        h, w = x.shape[2:]
        d = self.cfg.downsample
        if h % d or w % d:
            raise ConfigError(f"input {h}x{w} not divisible by downsample factor {d}")
        for i, stride in enumerate(self.cfg.strides()):
            x = relu(conv2d(x, self.params[f"backbone.{i}.w"], self.params[f"backbone.{i}.b"], stride))
        root_logits, root = self._head("root", x, self.taxonomy.n_roots)
        subs, sub_logits = {}, {}
        for s in self.taxonomy.sub_ids:
            sub_logits[s], subs[s] = self._head(
                f"sub.{self.taxonomy.sub_name(s)}", x, self.taxonomy.n_sub(s))
        return SegmentationOutput(root, subs, root_logits, sub_logits)


def build(cfg, taxonomy):
    """Initialize a HierNet deterministically from ``cfg.seed`` (He fan-in scaling)."""
    rng = np.random.default_rng(cfg.seed)
    params = {}

    def conv(name, cout, cin, k):
        fan_in = cin * k * k
        params[f"{name}.w"] = Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), (cout, cin, k, k)),
                                     requires_grad=True, name=f"{name}.w")
        params[f"{name}.b"] = Tensor(np.zeros(cout), requires_grad=True, name=f"{name}.b")

    cin = 3
    for i, c in enumerate(cfg.channels):
        conv(f"backbone.{i}", c, cin, 3)
        cin = c
    w = cfg.adapt_width
    heads = [("root", taxonomy.n_roots)]
    heads += [(f"sub.{taxonomy.sub_name(s)}", taxonomy.n_sub(s)) for s in taxonomy.sub_ids]
    for prefix, n in heads:
        conv(f"{prefix}.adapt1", w, cin, 1)
        conv(f"{prefix}.adapt2", w, w, 3)
        conv(f"{prefix}.head", n, w, 1)
    return HierNet(cfg, taxonomy, params)


def predict(output, taxonomy):
    """Fuse root and subclassifier decisions into leaf indices, ``[N, H, W]``.

    A pixel takes the root argmax; if that root class owns a subclassifier the
    subclassifier's argmax decides the leaf. Ties go to the lowest index.
    """
    root_arg = np.argmax(output.root.data, axis=1)
    leaves = taxonomy.leaves
    root_leaf = np.full(taxonomy.n_roots, -1, dtype=np.int64)
    sub_offset = {}
    for i, node in enumerate(leaves):
        if node.sub is None:
            root_leaf[node.root] = i
        elif node.sub == 0:
            sub_offset[node.root] = i
    pred = root_leaf[root_arg]
    for s, field_ in output.subs.items():
        sel = root_arg == s
        pred[sel] = sub_offset[s] + np.argmax(field_.data, axis=1)[sel]
    return pred
