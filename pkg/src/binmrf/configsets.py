"""Configuration sets: translation classes of on-subsets of the template clique."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import CapExceededError, NotASubshapeError
from .lattice import NodeSet, TemplateClique, nodeset

DEFAULT_TEMPLATE_CAP = 12


def anchor(on_set) -> NodeSet:
    """Translate a node set so its bounding box starts at (0, 0)."""
    nodes = nodeset(on_set)
    if not nodes:
        return ()
    i0 = min(i for i, _ in nodes)
    j0 = min(j for _, j in nodes)
    return tuple((i - i0, j - j0) for i, j in nodes)


@dataclass(frozen=True)
class ConfigClass:
    id: int
    canonical: NodeSet
    members: tuple[NodeSet, ...]

    @property
    def multiplicity(self) -> int:
        return len(self.members)

    @property
    def order(self) -> int:
        return len(self.canonical)

    def bitmap(self, k: int, l: int) -> str:
        on = set(self.canonical)
        return "/".join("".join("1" if (i, j) in on else "0" for j in range(l)) for i in range(k))


@dataclass(frozen=True)
class ConfigCatalog:
    template: TemplateClique
    classes: tuple[ConfigClass, ...]
    index: dict = field(hash=False, compare=False)
    # class id of every subset of the template, keyed by bitmask over template.shape
    code_to_class: np.ndarray = field(hash=False, compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.classes)

    @property
    def class_count(self) -> int:
        return len(self.classes)

    @property
    def free_parameters(self) -> int:
        return len(self.classes) - 1

    def by_bitmap(self, bitmap: str) -> int:
        """Class id for a bitmap like ``"10/01"`` (re-anchored before lookup)."""
        nodes = [(i, j) for i, row in enumerate(bitmap.split("/")) for j, c in enumerate(row) if c == "1"]
        return classify(self, nodes)


def _subset(tpl: TemplateClique, code: int) -> NodeSet:
    return tuple(p for b, p in enumerate(tpl.shape) if code >> b & 1)


@lru_cache(maxsize=None)
def build_catalog(tpl: TemplateClique, cap: int = DEFAULT_TEMPLATE_CAP) -> ConfigCatalog:
    if tpl.size > cap:
        raise CapExceededError(
            f"template has {tpl.size} nodes, above the enumeration cap of {cap}"
        )
    groups: dict[NodeSet, list[tuple[int, NodeSet]]] = {}
    for code in range(1 << tpl.size):
        subset = _subset(tpl, code)
        groups.setdefault(anchor(subset), []).append((code, subset))
    ordered = sorted(groups, key=lambda c: (len(c), c))
    code_to_class = np.empty(1 << tpl.size, dtype=np.int64)
    classes = []
    for cid, canonical in enumerate(ordered):
        members = tuple(s for _, s in groups[canonical])
        for code, _ in groups[canonical]:
            code_to_class[code] = cid
        classes.append(ConfigClass(cid, canonical, members))
    code_to_class.setflags(write=False)
    index = {c.canonical: c.id for c in classes}
    return ConfigCatalog(tpl, tuple(classes), index, code_to_class)


def classify(cat: ConfigCatalog, on_set) -> int:
    key = anchor(on_set)
    try:
        return cat.index[key]
    except KeyError:
        raise NotASubshapeError(f"{sorted(on_set)} is not a translate of a subset of the template") from None
