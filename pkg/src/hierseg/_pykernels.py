"""NumPy implementations of the numeric hot paths.

Used when the compiled extension is unavailable or when
``HIERSEG_PURE_PYTHON=1`` is set. Every function here has a twin with the
same signature in ``_ckernels.pyx``.
"""
import numpy as np


def _out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def conv2d_forward(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    ho = _out_size(h, kh, stride, pad)
    wo = _out_size(wd, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, k, ho, wo))
    for di in range(kh):
        for dj in range(kw):
            xs = xp[:, :, di:di + stride * (ho - 1) + 1:stride, dj:dj + stride * (wo - 1) + 1:stride]
            out += np.einsum("ncij,kc->nkij", xs, w[:, :, di, dj], optimize=True)
    out += b[None, :, None, None]
    return out


def conv2d_backward(x, w, gout, stride, pad):
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    ho, wo = gout.shape[2], gout.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for di in range(kh):
        for dj in range(kw):
            sl = (slice(None), slice(None),
                  slice(di, di + stride * (ho - 1) + 1, stride),
                  slice(dj, dj + stride * (wo - 1) + 1, stride))
            gw[:, :, di, dj] = np.einsum("nkij,ncij->kc", gout, xp[sl], optimize=True)
            gxp[sl] += np.einsum("nkij,kc->ncij", gout, w[:, :, di, dj], optimize=True)
    gx = gxp[:, :, pad:pad + h, pad:pad + wd]
    gb = gout.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(gx), gw, gb


def interp_matrix(n_in, n_out):
    """Row-stochastic (n_out, n_in) matrix for half-pixel-centre linear resampling."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(src), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    return m


def upsample_forward(x, factor):
    h, w = x.shape[2], x.shape[3]
    mh = interp_matrix(h, h * factor)
    mw = interp_matrix(w, w * factor)
    return np.einsum("ai,ncij,bj->ncab", mh, x, mw, optimize=True)


def upsample_backward(gout, factor):
    h, w = gout.shape[2] // factor, gout.shape[3] // factor
    mh = interp_matrix(h, h * factor)
    mw = interp_matrix(w, w * factor)
    return np.einsum("ai,ncab,bj->ncij", mh, gout, mw, optimize=True)


def vote_counts(classes, rects, n_classes, height, width):
    """Integer vote tensor (n_classes, height, width); rects rows are x0, y0, x1, y1."""
    counts = np.zeros((n_classes, height, width), dtype=np.int64)
    for cls, (x0, y0, x1, y1) in zip(classes, rects):
        counts[cls, y0:y1, x0:x1] += 1
    return counts
