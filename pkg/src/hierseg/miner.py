"""Rank weakly annotated images by weighted class votes and pick two disjoint subsets.

Input metadata is CSV with header ``image_id,class,kind[,x_min,y_min,x_max,y_max][,confidence]``
where ``kind`` is ``bbox`` or ``image_level``. Rows of one image must be
contiguous (Open Images metadata is sorted by image id); the reader groups
consecutive rows and keeps only bounded top-K state.
"""
import csv
import heapq
import json
import os
from collections import Counter
from dataclasses import dataclass, field

import yaml

KINDS = ("bbox", "image_level")


class WeightsError(ValueError):
    pass


def load_weights(path):
    with open(path) as f:
        raw = yaml.safe_load(f)
    return validate_weights(raw)


def validate_weights(raw):
    if not isinstance(raw, dict):
        raise WeightsError("vote weights must be a mapping class -> integer")
    out = {}
    for k, v in raw.items():
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise WeightsError(f"weight for {k!r} must be an integer >= 1, got {v!r}")
        out[str(k)] = v
    return out


def default_weights():
    from importlib.resources import files
    return validate_weights(yaml.safe_load(files("hierseg").joinpath("data/default_weights.yaml").read_text()))


def score_image(labels, weights, skipped=None):
    """Sum of vote weights over ``(class, kind)`` labels; unknown classes count 0.

    Unknown classes are tallied into the ``skipped`` Counter when given.
    """
    score = 0
    for cls, _kind in labels:
        w = weights.get(cls)
        if w is None:
            if skipped is not None:
                skipped[cls] += 1
            continue
        score += w
    return score


class _Entry:
    """Heap entry ordered so that the worst-ranked image is the heap minimum."""

    __slots__ = ("score", "image_id")

    def __init__(self, score, image_id):
        self.score = score
        self.image_id = image_id

    def __lt__(self, other):
        if self.score != other.score:
            return self.score < other.score
        return self.image_id > other.image_id


class TopK:
    """Bounded selection of the ``k`` best (score desc, image id asc) entries."""

    def __init__(self, k):
        self.k = k
        self._heap = []

    def push(self, score, image_id):
        if self.k <= 0 or score <= 0:
            return
        e = _Entry(score, image_id)
        if len(self._heap) < self.k:
            heapq.heappush(self._heap, e)
        elif self._heap[0] < e:
            heapq.heapreplace(self._heap, e)

    def ranked(self):
        return [(e.image_id, e.score) for e in sorted(self._heap, reverse=True)]


@dataclass
class MiningResult:
    bbox_ids: list
    image_ids: list
    scores: dict                      # image id -> {"bbox": s, "image_level": s}
    summary: dict = field(default_factory=dict)

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "bbox_subset.txt"), "w") as f:
            f.writelines(f"{i}\n" for i in self.bbox_ids)
        with open(os.path.join(out_dir, "image_level_subset.txt"), "w") as f:
            f.writelines(f"{i}\n" for i in self.image_ids)
        with open(os.path.join(out_dir, "summary.json"), "w") as f:
            json.dump({"summary": self.summary, "scores": self.scores}, f, indent=2, sort_keys=True)


def read_metadata(lines, errors=None):
    """Yield ``(image_id, [(class, kind), ...])`` from CSV lines, grouping consecutive rows.

    Malformed rows are skipped and appended to ``errors`` as ``(line number, reason)``.
    """
    reader = csv.DictReader(lines)
    missing = {"image_id", "class", "kind"} - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"metadata header lacks columns {sorted(missing)}")
    current, labels = None, []
    for row in reader:
        lineno = reader.line_num
        image_id, cls, kind = row.get("image_id"), row.get("class"), row.get("kind")
        if not image_id or not cls or kind not in KINDS or None in row:
            if errors is not None:
                errors.append((lineno, f"malformed row {row!r}"))
            continue
        if kind == "bbox" and row.get("x_min") not in (None, ""):
            try:
                x0, y0, x1, y1 = (float(row[k]) for k in ("x_min", "y_min", "x_max", "y_max"))
            except (TypeError, ValueError):
                if errors is not None:
                    errors.append((lineno, "non-numeric bbox coordinates"))
                continue
            if not (x0 < x1 and y0 < y1):
                if errors is not None:
                    errors.append((lineno, "degenerate bbox"))
                continue
        if image_id != current:
            if current is not None:
                yield current, labels
            current, labels = image_id, []
        labels.append((cls, kind))
    if current is not None:
        yield current, labels


def mine(records, weights, k_bbox, k_image):
    """Select the bbox subset, then the image-level subset from the remaining images.

    ``records`` yields ``(image_id, [(class, kind), ...])``. Each subset is
    ranked by the weighted votes of its own label kind; ties go to the smaller
    image id; only images with a positive score are eligible.
    """
    if k_bbox < 0 or k_image < 0:
        raise ValueError("subset sizes must be >= 0")
    top_bbox = TopK(k_bbox)
    # at most k_bbox of these can be taken by the bbox subset
    top_image = TopK(k_bbox + k_image)
    skipped = Counter()
    n_images = n_labels = 0
    for image_id, labels in records:
        n_images += 1
        n_labels += len(labels)
        top_bbox.push(score_image([l for l in labels if l[1] == "bbox"], weights, skipped), image_id)
        top_image.push(score_image([l for l in labels if l[1] == "image_level"], weights, skipped), image_id)

    bbox = top_bbox.ranked()
    taken = {i for i, _ in bbox}
    image = [(i, s) for i, s in top_image.ranked() if i not in taken][:k_image]
    scores = {i: {"bbox": s} for i, s in bbox}
    for i, s in image:
        scores[i] = {"image_level": s}
    summary = {
        "images_seen": n_images,
        "labels_seen": n_labels,
        "bbox_selected": len(bbox),
        "image_level_selected": len(image),
        "skipped_unknown_classes": dict(sorted(skipped.items())),
    }
    return MiningResult([i for i, _ in bbox], [i for i, _ in image], scores, summary)


def mine_csv(path, weights, k_bbox, k_image):
    errors = []
    with open(path, newline="") as f:
        result = mine(read_metadata(f, errors), weights, k_bbox, k_image)
    result.summary["errors"] = [{"line": n, "reason": r} for n, r in errors]
    return result
