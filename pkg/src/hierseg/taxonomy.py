"""Two-level class hierarchy and dataset-label mappings.

A taxonomy is loaded from YAML::

    roots:
      - background
      - road
      - name: vehicle
        subclasses: [car, bus, truck]
      - name: human
        subclasses: [person, rider]
    datasets:
      synthetic:        # dataset label id -> hierarchy node
        0: background
        1: road
        2: vehicle/car
        3: truck        # bare names are accepted when unambiguous

Root entries may carry an explicit ``index`` which must match their position.
Subclassifiers are identified by the index of the root class that owns them.
"""
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
import yaml

VOID = 255
"""Sentinel for unlabeled pixels in sparse label maps."""


class TaxonomyError(ValueError):
    pass


class Node(NamedTuple):
    root: int
    sub: Optional[int] = None

    @property
    def is_root(self):
        return self.sub is None


@dataclass(frozen=True)
class Taxonomy:
    root_classes: tuple
    subclasses: dict  # root index -> tuple of subclass names
    label_maps: dict = field(default_factory=dict)  # dataset -> {label id: Node}

    def __post_init__(self):
        _check_unique("root classifier", self.root_classes)
        for r, subs in self.subclasses.items():
            if not 0 <= r < len(self.root_classes):
                raise TaxonomyError(f"subclassifier refers to missing root index {r}")
            if not subs:
                raise TaxonomyError(f"subclassifier of {self.root_classes[r]!r} is empty")
            _check_unique(f"subclassifier {self.root_classes[r]!r}", subs)
        for ds, lm in self.label_maps.items():
            for lid, node in lm.items():
                if not 0 <= lid < VOID:
                    raise TaxonomyError(f"dataset {ds!r}: label id {lid} outside [0, {VOID})")
                self._check_node(node)

    # structure ---------------------------------------------------------

    @property
    def n_roots(self):
        return len(self.root_classes)

    @property
    def sub_ids(self):
        """Root indices owning a subclassifier, ascending."""
        return tuple(sorted(self.subclasses))

    def n_sub(self, sub):
        return len(self._subs(sub))

    def sub_name(self, sub):
        self._subs(sub)
        return self.root_classes[sub]

    def _subs(self, sub):
        try:
            return self.subclasses[sub]
        except KeyError:
            raise TaxonomyError(f"root index {sub} owns no subclassifier") from None

    def _check_node(self, node):
        if not 0 <= node.root < self.n_roots:
            raise TaxonomyError(f"unknown node {node}")
        if node.sub is not None and not 0 <= node.sub < len(self.subclasses.get(node.root, ())):
            raise TaxonomyError(f"unknown node {node}")

    def node(self, name):
        """Resolve ``"root"``, ``"root/sub"`` or an unambiguous bare name to a Node."""
        if "/" in name:
            rname, sname = name.split("/", 1)
            r = self._root_index(rname)
            subs = self.subclasses.get(r, ())
            if sname not in subs:
                raise TaxonomyError(f"unknown node {name!r}")
            return Node(r, subs.index(sname))
        hits = [Node(i) for i, n in enumerate(self.root_classes) if n == name]
        hits += [Node(r, subs.index(name)) for r, subs in self.subclasses.items() if name in subs]
        if not hits:
            raise TaxonomyError(f"unknown node {name!r}")
        if len(hits) > 1:
            raise TaxonomyError(f"ambiguous node name {name!r}; use 'root/sub'")
        return hits[0]

    def _root_index(self, name):
        try:
            return self.root_classes.index(name)
        except ValueError:
            raise TaxonomyError(f"unknown root class {name!r}") from None

    def node_name(self, node):
        self._check_node(node)
        if node.sub is None:
            return self.root_classes[node.root]
        return f"{self.root_classes[node.root]}/{self.subclasses[node.root][node.sub]}"

    def project_to_root(self, node):
        """Index of the root class above ``node`` (identity for root nodes)."""
        self._check_node(node)
        return node.root

    @property
    def leaves(self):
        """Leaf nodes in hierarchy order: a root without subclassifier, or each subclass."""
        out = []
        for r in range(self.n_roots):
            subs = self.subclasses.get(r)
            if subs:
                out.extend(Node(r, s) for s in range(len(subs)))
            else:
                out.append(Node(r))
        return out

    @property
    def leaf_names(self):
        return [self.node_name(n) for n in self.leaves]

    def subclass_leaf_indices(self):
        return [i for i, n in enumerate(self.leaves) if n.sub is not None]

    # dataset labels ----------------------------------------------------

    @property
    def default_dataset(self):
        if not self.label_maps:
            raise TaxonomyError("taxonomy defines no dataset label maps")
        return next(iter(self.label_maps))

    def label_map(self, dataset=None):
        ds = dataset or self.default_dataset
        try:
            return self.label_maps[ds]
        except KeyError:
            raise TaxonomyError(f"unknown dataset {ds!r}") from None

    def label_node(self, label_id, dataset=None):
        try:
            return self.label_map(dataset)[int(label_id)]
        except KeyError:
            raise TaxonomyError(f"label id {label_id} is not mapped") from None

    def label_id(self, node, dataset=None):
        """Smallest dataset label id mapped to ``node``."""
        ids = [i for i, n in self.label_map(dataset).items() if n == node]
        if not ids:
            raise TaxonomyError(f"no label id maps to {self.node_name(node)!r}")
        return min(ids)

    def weak_label_target(self, label_id, dataset=None):
        """``(subclassifier id, subclass index)`` receiving votes for a weak label."""
        node = self.label_node(label_id, dataset)
        if node.sub is None:
            raise TaxonomyError(
                f"label id {label_id} maps to root class {self.root_classes[node.root]!r}; "
                "weak labels must land in a subclassifier")
        return node.root, node.sub

    def root_lut(self, dataset=None):
        """Array mapping label id -> root index; unmapped ids and VOID map to VOID."""
        lut = np.full(VOID + 1, VOID, dtype=np.int64)
        for lid, node in self.label_map(dataset).items():
            lut[lid] = node.root
        return lut

    def sub_lut(self, sub, dataset=None):
        """Array mapping label id -> subclass index of ``sub``, else -1."""
        self._subs(sub)
        lut = np.full(VOID + 1, -1, dtype=np.int64)
        for lid, node in self.label_map(dataset).items():
            if node.root == sub and node.sub is not None:
                lut[lid] = node.sub
        return lut

    def leaf_lut(self, dataset=None):
        """Array mapping label id -> leaf index; non-leaf and unmapped ids map to VOID."""
        index = {n: i for i, n in enumerate(self.leaves)}
        lut = np.full(VOID + 1, VOID, dtype=np.int64)
        for lid, node in self.label_map(dataset).items():
            lut[lid] = index.get(node, VOID)
        return lut

    # serialization -----------------------------------------------------

    def to_dict(self):
        roots = []
        for i, name in enumerate(self.root_classes):
            subs = self.subclasses.get(i)
            roots.append({"name": name, "subclasses": list(subs)} if subs else name)
        datasets = {ds: {lid: self.node_name(n) for lid, n in lm.items()}
                    for ds, lm in self.label_maps.items()}
        return {"roots": roots, "datasets": datasets}

    def dumps(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _check_unique(where, names):
    seen = set()
    for n in names:
        if not isinstance(n, str) or not n:
            raise TaxonomyError(f"{where}: class names must be non-empty strings, got {n!r}")
        if "/" in n:
            raise TaxonomyError(f"{where}: class name {n!r} may not contain '/'")
        if n in seen:
            raise TaxonomyError(f"{where}: duplicate class name {n!r}")
        seen.add(n)


def from_dict(cfg):
    if not isinstance(cfg, dict) or "roots" not in cfg:
        raise TaxonomyError("taxonomy config needs a 'roots' list")
    roots, subclasses = [], {}
    for pos, entry in enumerate(cfg["roots"]):
        if isinstance(entry, str):
            roots.append(entry)
            continue
        if not isinstance(entry, dict) or "name" not in entry:
            raise TaxonomyError(f"root entry {pos} must be a name or a mapping with 'name'")
        unknown = set(entry) - {"name", "subclasses", "index"}
        if unknown:
            raise TaxonomyError(f"root {entry['name']!r}: unknown keys {sorted(unknown)}")
        if "index" in entry and entry["index"] != pos:
            raise TaxonomyError(
                f"root {entry['name']!r}: index {entry['index']} is not dense (expected {pos})")
        roots.append(entry["name"])
        subs = entry.get("subclasses") or []
        for s in subs:
            if not isinstance(s, str):
                raise TaxonomyError(
                    f"subclass entry {s!r} under {entry['name']!r}: only two levels are supported")
        if subs:
            subclasses[pos] = tuple(subs)
    tax = Taxonomy(tuple(roots), subclasses)
    label_maps = {}
    for ds, mapping in (cfg.get("datasets") or {}).items():
        label_maps[ds] = {int(lid): tax.node(name) for lid, name in (mapping or {}).items()}
    return Taxonomy(tax.root_classes, tax.subclasses, label_maps)


def loads(text):
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise TaxonomyError(f"malformed taxonomy config: {e}") from e
    return from_dict(cfg)


def load_taxonomy(path):
    with open(path) as f:
        return loads(f.read())


def default_taxonomy():
    """The taxonomy used by the synthetic dataset generator."""
    from importlib.resources import files
    return loads(files("hierseg").joinpath("data/synthetic_taxonomy.yaml").read_text())
