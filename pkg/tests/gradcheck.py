"""Central finite-difference check of the full network plus hierarchical loss."""
import numpy as np

from hierseg.datapipe.batching import prepare_sample
from hierseg.datapipe.dataset import generate_records
from hierseg.hierloss import LossConfig, total_loss
from hierseg.model import HierNetConfig, build
from hierseg.tensor import Tape

EPS = 1e-5
# gradients below this magnitude are compared in absolute terms
REL_FLOOR = 1e-7

SMALL = HierNetConfig(channels=(4, 6), adapt_width=4, downsample=2)


def make_instance(taxonomy, seed, cfg=SMALL, size=(8, 8)):
    """One per-pixel, one bbox and one image-level sample with randomized biases.

    Non-zero biases keep pre-activations off the ReLU kink, where central
    differences are meaningless.
    """
    rng = np.random.default_rng(seed)
    net = build(HierNetConfig(cfg.channels, cfg.adapt_width, cfg.downsample, seed), taxonomy)
    for name, p in net.params.items():
        if name.endswith(".b"):
            p.data = rng.normal(0.0, 0.1, p.data.shape)
    samples = []
    for i, mode in enumerate(("per_pixel", "bbox", "image_level")):
        rec = generate_records(taxonomy, 1, mode, seed * 10 + i, size)[0]
        samples.append(prepare_sample(rec, taxonomy, size, rng))
    x = (np.stack([s.image for s in samples]) - 0.5) / 0.25
    return net, x, [s.targets for s in samples]


def loss_of(net, x, targets, taxonomy, cfg):
    out = net.forward(x)
    return total_loss(out, targets, taxonomy, cfg, net.weights())


def all_terms_active(net, x, targets, taxonomy, cfg=LossConfig()):
    _, bd = loss_of(net, x, targets, taxonomy, cfg)
    return all(c > 0 for c in bd.counts.values()), bd


def find_instance(taxonomy, start=0, tries=200):
    """First seed whose instance exercises every loss term."""
    for seed in range(start, start + tries):
        inst = make_instance(taxonomy, seed)
        if all_terms_active(*inst, taxonomy)[0]:
            return seed, inst
    raise RuntimeError("no instance with all loss terms active")


def check(net, x, targets, taxonomy, cfg=LossConfig(), params=None):
    """Return ``(max relative error, per-parameter errors, n checked)``."""
    net.zero_grad()
    with Tape() as tape:
        loss, _ = loss_of(net, x, targets, taxonomy, cfg)
    tape.backward(loss)
    analytic = net.grads()
    errs, n = {}, 0
    for name in params or list(net.params):
        p = net.params[name]
        num = np.zeros_like(p.data)
        for idx in np.ndindex(p.data.shape):
            orig = p.data[idx]
            p.data[idx] = orig + EPS
            up = loss_of(net, x, targets, taxonomy, cfg)[1].total
            p.data[idx] = orig - EPS
            down = loss_of(net, x, targets, taxonomy, cfg)[1].total
            p.data[idx] = orig
            num[idx] = (up - down) / (2 * EPS)
        a = analytic[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), REL_FLOOR)
        errs[name] = float(np.max(np.abs(a - num) / denom))
        n += p.data.size
    return max(errs.values()), errs, n
