"""Confusion-matrix segmentation metrics (per-class IoU / accuracy, means)."""
import json

import numpy as np

from .taxonomy import VOID


class ConfusionMatrix:
    """Integer counts, rows = ground truth, columns = prediction; VOID pixels skipped."""

    def __init__(self, n, counts=None):
        self.n = n
        self.counts = np.zeros((n, n), dtype=np.int64) if counts is None else np.asarray(counts, dtype=np.int64)
        if self.counts.shape != (n, n):
            raise ValueError(f"counts must be {n}x{n}")

    def accumulate(self, gt, pred):
        gt = np.asarray(gt)
        pred = np.asarray(pred)
        if gt.shape != pred.shape:
            raise ValueError(f"shape mismatch: gt {gt.shape} vs pred {pred.shape}")
        keep = gt != VOID
        g = gt[keep].astype(np.int64)
        p = pred[keep].astype(np.int64)
        if g.size and (g.max() >= self.n or p.max() >= self.n or p.min() < 0 or g.min() < 0):
            raise ValueError("label index out of range")
        self.counts += np.bincount(g * self.n + p, minlength=self.n * self.n).reshape(self.n, self.n)
        return self

    def __add__(self, other):
        return ConfusionMatrix(self.n, self.counts + other.counts)

    @property
    def present(self):
        """Classes with non-zero ground-truth pixel count."""
        return self.counts.sum(axis=1) > 0

    def per_class_iou(self):
        tp = np.diag(self.counts).astype(np.float64)
        denom = self.counts.sum(axis=0) + self.counts.sum(axis=1) - np.diag(self.counts)
        return np.divide(tp, denom, out=np.full(self.n, np.nan), where=denom > 0)

    def per_class_acc(self):
        tp = np.diag(self.counts).astype(np.float64)
        rows = self.counts.sum(axis=1)
        return np.divide(tp, rows, out=np.full(self.n, np.nan), where=rows > 0)

    def miou(self, classes=None):
        return _mean_present(self.per_class_iou(), self.present, classes)

    def macc(self, classes=None):
        return _mean_present(self.per_class_acc(), self.present, classes)

    def excluded(self):
        return [int(i) for i in np.flatnonzero(~self.present)]

    def report(self, names=None, subset=None):
        names = names or [str(i) for i in range(self.n)]
        iou, acc = self.per_class_iou(), self.per_class_acc()
        out = {
            "classes": list(names),
            "iou": [None if np.isnan(v) else float(v) for v in iou],
            "acc": [None if np.isnan(v) else float(v) for v in acc],
            "miou": self.miou(),
            "macc": self.macc(),
            "excluded": [names[i] for i in self.excluded()],
        }
        if subset is not None:
            out["subset_miou"] = self.miou(subset)
            out["subset_macc"] = self.macc(subset)
        return out


def _mean_present(values, present, classes):
    sel = present.copy()
    if classes is not None:
        only = np.zeros_like(sel)
        only[list(classes)] = True
        sel &= only
    if not sel.any():
        return float("nan")
    return float(values[sel].sum() / sel.sum())


def miou(cm):
    return cm.miou()


def macc(cm):
    return cm.macc()


def per_class_iou(cm):
    return cm.per_class_iou()


def epoch_average(history, last=3, keys=None):
    """Mean of each scalar metric over the final ``last`` epochs."""
    if len(history) < last:
        raise ValueError(f"need at least {last} epochs, have {len(history)}")
    tail = history[-last:]
    keys = keys or [k for k, v in tail[0].items() if isinstance(v, (int, float)) and not isinstance(v, bool)]
    return {k: float(np.mean([h[k] for h in tail])) for k in keys}


def format_table(report):
    """Aligned text table of per-class IoU and accuracy (percent)."""
    rows = [("class", "IoU", "Acc")]
    for name, i, a in zip(report["classes"], report["iou"], report["acc"]):
        rows.append((name, "-" if i is None else f"{100 * i:.1f}", "-" if a is None else f"{100 * a:.1f}"))
    rows.append(("mean", f"{100 * report['miou']:.1f}", f"{100 * report['macc']:.1f}"))
    width = max(len(r[0]) for r in rows)
    return "\n".join(f"{r[0]:<{width}}  {r[1]:>6}  {r[2]:>6}" for r in rows)


def dumps_report(report):
    return json.dumps(report, indent=2, sort_keys=True)
