"""Time the Cython kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json]

Outputs from the two backends are compared before timing so a fast but wrong
kernel does not go unnoticed. The NumPy convolution goes through BLAS and wins
on large tensors; the direct loops win at the small shapes used in training.
"""
import argparse
import json
import timeit

import numpy as np

from hierseg import _pykernels

try:
    from hierseg import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    x = rng.normal(size=(4, 16, 32, 32))
    w = rng.normal(size=(16, 16, 3, 3))
    b = rng.normal(size=16)
    g = rng.normal(size=(4, 16, 32, 32))
    # shapes seen while training the study network: 3 crops of 32x32, 8-16 channels
    tx = rng.normal(size=(3, 8, 16, 16))
    tw = rng.normal(size=(16, 8, 3, 3))
    tg = rng.normal(size=(3, 16, 16, 16))
    small = rng.normal(size=(4, 12, 8, 8))
    up_g = rng.normal(size=(4, 12, 32, 32))
    classes = rng.integers(0, 5, size=40)
    x0 = rng.integers(0, 60, size=40)
    y0 = rng.integers(0, 60, size=40)
    rects = np.stack([x0, y0, x0 + rng.integers(1, 40, 40), y0 + rng.integers(1, 40, 40)], axis=1)
    rects = np.minimum(rects, 96)
    return {
        "conv2d_forward 4x16x32x32": lambda k: k.conv2d_forward(x, w, b, 1, 1),
        "conv2d_backward 4x16x32x32": lambda k: k.conv2d_backward(x, w, g, 1, 1),
        "conv2d_forward stride 2": lambda k: k.conv2d_forward(x, w, b, 2, 1),
        "conv2d_forward 3x8x16x16": lambda k: k.conv2d_forward(tx, tw, b, 1, 1),
        "conv2d_backward 3x8x16x16": lambda k: k.conv2d_backward(tx, tw, tg, 1, 1),
        "upsample_forward x4": lambda k: k.upsample_forward(small, 4),
        "upsample_backward x4": lambda k: k.upsample_backward(up_g, 4),
        "vote_counts 40 boxes 96x96": lambda k: k.vote_counts(classes.tolist(), rects.tolist(), 5, 96, 96),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(p, q) for p, q in zip(a, b))
    return np.allclose(a, b, rtol=1e-10, atol=1e-10)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)

    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    rows = []
    for name, fn in cases(np.random.default_rng(0)).items():
        row = {"kernel": name}
        if _ckernels is not None:
            row["agree"] = bool(same(fn(_pykernels), fn(_ckernels)))
        for label, mod in backends.items():
            row[label] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        if "cython" in row:
            row["speedup"] = row["python"] / row["cython"]
        rows.append(row)

    if args.json:
        print(json.dumps(rows, indent=2))
        return
    if _ckernels is None:
        print("compiled extension not available; timing the NumPy fallback only")
    print(f"{'kernel':32s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}  agree")
    for r in rows:
        c = f"{1e3 * r['cython']:10.2f}" if "cython" in r else f"{'-':>10s}"
        s = f"{r['speedup']:8.2f}" if "speedup" in r else f"{'-':>8s}"
        print(f"{r['kernel']:32s} {1e3 * r['python']:10.2f} {c} {s}  {r.get('agree', '-')}")


if __name__ == "__main__":
    main()
