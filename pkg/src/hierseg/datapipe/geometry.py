"""Resizing and the fit-then-crop preprocessing for weakly labeled images."""
import math

import numpy as np

from .. import kernels
from ..pseudo_gt import BBOX, WeakAnnotation


def resize_bilinear(image, size):
    """Bilinear resize of a ``(C, h, w)`` array to ``size = (H, W)``."""
    c, h, w = image.shape
    mh = kernels.interp_matrix(h, size[0])
    mw = kernels.interp_matrix(w, size[1])
    return np.einsum("ai,cij,bj->cab", mh, np.asarray(image, dtype=np.float64), mw, optimize=True)


def resize_nearest(mask, size):
    h, w = mask.shape
    ys = np.minimum(((np.arange(size[0]) + 0.5) * h / size[0]).astype(np.int64), h - 1)
    xs = np.minimum(((np.arange(size[1]) + 0.5) * w / size[1]).astype(np.int64), w - 1)
    return mask[ys[:, None], xs[None, :]]


def fit_scale(src, target):
    """Smallest uniform scale at which ``src = (h, w)`` covers ``target = (H, W)``."""
    return max(target[0] / src[0], target[1] / src[1])


def fit_and_crop(image, annotations, target, rng, mask=None):
    """Scale so the image tightly covers ``target``, then crop a random window.

    Box coordinates are scaled (rounded outwards), shifted and clipped to the
    crop; boxes left with zero area are dropped. Image-level labels pass
    through. ``mask``, when given, is resized with nearest neighbour.
    Returns ``(image, annotations, mask, (y_off, x_off, scale))``.
    """
    _, h, w = image.shape
    th, tw = target
    s = fit_scale((h, w), target)
    nh = max(th, math.ceil(h * s - 1e-9))
    nw = max(tw, math.ceil(w * s - 1e-9))
    if (nh, nw) == (h, w):
        scaled = np.asarray(image, dtype=np.float64)
        scaled_mask = mask
    else:
        scaled = resize_bilinear(image, (nh, nw))
        scaled_mask = resize_nearest(mask, (nh, nw)) if mask is not None else None
    y_off = int(rng.integers(0, nh - th + 1))
    x_off = int(rng.integers(0, nw - tw + 1))
    out = scaled[:, y_off:y_off + th, x_off:x_off + tw]
    sy, sx = nh / h, nw / w
    kept = []
    for a in annotations:
        if a.kind != BBOX:
            kept.append(a)
            continue
        x0, y0, x1, y1 = a.rect
        nx0 = min(max(math.floor(x0 * sx) - x_off, 0), tw)
        ny0 = min(max(math.floor(y0 * sy) - y_off, 0), th)
        nx1 = min(max(math.ceil(x1 * sx) - x_off, 0), tw)
        ny1 = min(max(math.ceil(y1 * sy) - y_off, 0), th)
        if nx1 > nx0 and ny1 > ny0:
            kept.append(WeakAnnotation(BBOX, a.cls, (nx0, ny0, nx1, ny1)))
    if scaled_mask is not None:
        scaled_mask = scaled_mask[y_off:y_off + th, x_off:x_off + tw]
    return np.ascontiguousarray(out), kept, scaled_mask, (y_off, x_off, s)
