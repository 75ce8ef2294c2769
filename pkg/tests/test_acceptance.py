"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the lines are also
collected into the terminal summary.
"""
import time

import numpy as np
import pytest

import gradcheck
from hierseg.cli import main as cli_main
from hierseg.experiment import StudySettings, summarize, weak_size_study
from hierseg.hierloss import PER_PIXEL, LossConfig, Targets, dense_cce, sparse_cce, total_loss, weak_condition_mask
from hierseg.metrics import ConfusionMatrix
from hierseg.miner import default_weights, mine
from hierseg.model import HierNetConfig, build
from hierseg.pseudo_gt import BBOX, WeakAnnotation, densify_sparse, sparse_root_gt, vote_dense_gt, weak_pseudo_gt
from hierseg.taxonomy import VOID, default_taxonomy
from hierseg.tensor import Tape, Tensor, softmax
from oracles import brute_force_votes, full_sort_mine, random_annotations, random_metadata

TAX = default_taxonomy()
RESULTS = []


def verdict(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({detail})"
    RESULTS.append(line)
    print("\n" + line, flush=True)
    assert passed, line


def test_1_gradient_oracle():
    t0 = time.perf_counter()
    seed, (net, x, targets) = gradcheck.find_instance(TAX)
    active, bd = gradcheck.all_terms_active(net, x, targets, TAX)
    assert TAX.n_roots >= 3 and len(TAX.sub_ids) == 2 and x.shape[2:] == (8, 8)
    assert active, bd.counts
    worst, _, n = gradcheck.check(net, x, targets, TAX)
    elapsed = time.perf_counter() - t0
    verdict(1, "full loss gradients vs central differences", worst < 1e-4 and elapsed < 60,
            f"max rel err {worst:.2e} over {n} parameters, {elapsed:.1f}s, instance seed {seed}")


def test_2_voting_oracle():
    rng = np.random.default_rng(20)
    vehicle = {2: 0, 3: 1, 4: 2}
    worst_diff, worst_norm, images = 0.0, 0.0, 0
    for _ in range(1000):
        h, w = int(rng.integers(1, 13)), int(rng.integers(1, 13))
        anns = random_annotations(rng, h, w, list(vehicle), int(rng.integers(1, 7)))
        m = vote_dense_gt(anns, (h, w), 2, TAX)
        probs, cov = brute_force_votes(anns, h, w, 3, vehicle)
        assert np.array_equal(m.coverage, cov)
        worst_diff = max(worst_diff, float(np.max(np.abs(m.probs - probs))))
        if cov.any():
            worst_norm = max(worst_norm, float(np.max(np.abs(m.probs.sum(axis=0)[cov] - 1))))
        images += 1
    verdict(2, "vote_dense_gt vs brute-force counter", worst_diff <= 1e-12 and worst_norm < 1e-9,
            f"{images} images, max |diff| {worst_diff:.1e}, max |sum-1| {worst_norm:.1e}")


def _random_batch(rng, size=16):
    """Per-pixel sample plus two bbox samples with random boxes."""
    h = w = size
    sparse = rng.choice([0, 1, 2, 3, 4, 5, 6, VOID], size=(h, w))
    targets = [Targets(PER_PIXEL, sparse_root_gt(sparse, TAX),
                       {s: densify_sparse(sparse, s, TAX) for s in TAX.sub_ids})]
    for _ in range(2):
        anns = []
        for c in rng.integers(2, 7, int(rng.integers(1, 5))):
            x0, y0 = int(rng.integers(0, w - 1)), int(rng.integers(0, h - 1))
            anns.append(WeakAnnotation(
                BBOX, int(c), (x0, y0, int(rng.integers(x0 + 1, w + 1)), int(rng.integers(y0 + 1, h + 1)))))
        targets.append(Targets(BBOX, None, weak_pseudo_gt(anns, (h, w), TAX)))
    return rng.normal(size=(3, 3, h, w)), targets


def test_3_masking_exactness():
    rng = np.random.default_rng(30)
    cfg = HierNetConfig(channels=(4, 6), adapt_width=4, downsample=2)
    masked_pixels = nonzero_sub = leaks = root_leaks = 0
    for b in range(100):
        net = build(HierNetConfig(cfg.channels, cfg.adapt_width, cfg.downsample, seed=b), TAX)
        x, targets = _random_batch(rng)
        with Tape() as tape:
            out = net.forward(x)
            loss, _ = total_loss(out, targets, TAX, LossConfig(), net.weights())
        tape.backward(loss)
        for i in (1, 2):
            for sub in TAX.sub_ids:
                mask = weak_condition_mask(out.root.data[i], targets[i].subs[sub], sub, TAX)
                g = out.sub_logits[sub].grad[i]
                leaks += int(np.count_nonzero(g[:, ~mask]))
                masked_pixels += int((~mask).sum())
                nonzero_sub += int(np.count_nonzero(g[:, mask]))
            root_leaks += int(np.count_nonzero(out.root_logits.grad[i]))
        # weak-only batch without the L2 term: the root head gets nothing at all
        net.zero_grad()
        with Tape() as tape:
            out = net.forward(x[1:])
            loss, _ = total_loss(out, targets[1:], TAX, LossConfig())
        if loss.requires_grad:  # otherwise no pixel passed the condition and nothing flows anywhere
            tape.backward(loss)
        grads = net.grads()
        root_leaks += sum(int(np.count_nonzero(grads[k])) for k in grads if k.startswith("root."))
    verdict(3, "zero gradients at condition-failing pixels and root head from weak samples",
            leaks == 0 and root_leaks == 0 and nonzero_sub > 0,
            f"100 batches, {masked_pixels} masked pixel slots, {leaks} sub leaks, {root_leaks} root leaks")


def test_4_reduction_identity():
    rng = np.random.default_rng(40)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 6))
        shape = (int(rng.integers(1, 3)), int(rng.integers(1, 6)), int(rng.integers(1, 6)))
        s = softmax(Tensor(rng.normal(scale=3.0, size=(shape[0], n) + shape[1:])))
        gt = rng.integers(0, n, size=shape)
        one_hot = (np.arange(n)[None, :, None, None] == gt[:, None]).astype(np.float64)
        d, _ = dense_cce(s, one_hot, np.ones(shape, dtype=bool))
        sp, _ = sparse_cce(s, gt)
        worst = max(worst, abs(float(d.data[0] - sp.data[0])))
    verdict(4, "dense CCE on one-hot equals sparse CCE", worst <= 1e-12,
            f"1000 fields, max |diff| {worst:.1e}")


@pytest.mark.slow
def test_5_directional_study():
    t0 = time.perf_counter()
    lines = []
    results = weak_size_study(StudySettings(), TAX, progress=lambda name, seed, rep: lines.append(
        f"{name} seed {seed}: {100 * rep['sub_miou']:.1f}"))
    means = {k: 100 * v for k, v in summarize(results).items()}
    gain = means["large"] - means["0"]
    a = gain >= 2.0
    b = means["large"] > means["0"] and means["small"] <= means["large"]
    print("\n" + "\n".join(lines))
    verdict(5, "weak supervision helps subclasses; larger weak sets help more", a and b,
            f"mean subclass mIoU 0={means['0']:.1f} small={means['small']:.1f} large={means['large']:.1f}; "
            f"(a) gain {gain:+.1f} {'ok' if a else 'fails'}, (b) {'ok' if b else 'fails'}; "
            f"{time.perf_counter() - t0:.0f}s")


def test_6_mining_oracle():
    rng = np.random.default_rng(60)
    recs = random_metadata(rng, 10_000)
    w = default_weights()
    res = mine(iter(recs), w, 800, 800)
    exact = (res.bbox_ids, res.image_ids) == full_sort_mine(recs, w, 800, 800)
    disjoint = not set(res.bbox_ids) & set(res.image_ids)
    scaled = all((mine(recs, {k: f * v for k, v in w.items()}, 800, 800).bbox_ids,
                  mine(recs, {k: f * v for k, v in w.items()}, 800, 800).image_ids)
                 == (res.bbox_ids, res.image_ids) for f in (2, 7))
    verdict(6, "streaming mine() vs full sort", exact and disjoint and scaled,
            f"10000 records, exact={exact}, disjoint={disjoint}, scale-invariant={scaled}")


def test_7_metrics_oracle():
    cm = ConfusionMatrix(2, [[3, 1], [0, 4]])
    exact = cm.miou() == 0.775 and cm.macc() == 0.875
    rng = np.random.default_rng(70)
    additive = True
    for _ in range(100):
        gt = rng.integers(0, 5, size=200)
        gt[rng.random(200) < 0.1] = VOID
        pred = rng.integers(0, 5, size=200)
        cut = int(rng.integers(0, 201))
        whole = ConfusionMatrix(5).accumulate(gt, pred)
        parts = ConfusionMatrix(5).accumulate(gt[:cut], pred[:cut]) + ConfusionMatrix(5).accumulate(gt[cut:], pred[cut:])
        additive &= bool(np.array_equal(whole.counts, parts.counts))
    verdict(7, "hand confusion matrix and additivity", exact and additive,
            f"mIoU {cm.miou()!r}, mAcc {cm.macc()!r}, additive over 100 random splits={additive}")


def test_8_determinism(tmp_path):
    root = tmp_path
    for mode, n, seed, name in [("per_pixel", 6, 1, "pp"), ("bbox", 8, 2, "bb"),
                                ("image_level", 4, 3, "il"), ("per_pixel", 4, 4, "val")]:
        assert cli_main(["synth", "--mode", mode, "--n", str(n), "--seed", str(seed),
                         "--size", "32", "32", "--out", str(root / name)]) == 0
    (root / "cfg.yaml").write_text(
        "batch: {preset: batch4}\noptimizer: {epochs: 3}\n"
        "data: {per_pixel: pp, bbox: bb, image_level: il, val: val}\n")
    for d in ("a", "b"):
        assert cli_main(["train", "--config", str(root / "cfg.yaml"), "--seed", "11", "--out", str(root / d)]) == 0
    same = {name: (root / "a" / name).read_bytes() == (root / "b" / name).read_bytes()
            for name in ("checkpoint.hseg", "metrics.json")}
    verdict(8, "cmd_train twice gives identical checkpoint and metrics", all(same.values()),
            ", ".join(f"{k} identical={v}" for k, v in same.items()))
