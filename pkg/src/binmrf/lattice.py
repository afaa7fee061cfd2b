"""Lattice geometry: node sets, translation, template cliques and their placement."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional

import numpy as np

from .errors import TemplateTooLargeError, ValidationError

Node = tuple[int, int]
NodeSet = tuple[Node, ...]


def nodeset(nodes: Iterable[Node]) -> NodeSet:
    """Canonical (row-major sorted, duplicate-free) node set."""
    return tuple(sorted({(int(i), int(j)) for i, j in nodes}))


class Boundary(str, enum.Enum):
    TORUS = "torus"
    FREE = "free"


@dataclass(frozen=True)
class LatticeSpec:
    """An ``n x m`` rectangular lattice.

    ``mask`` (free boundary only) marks which nodes belong to the observed
    region; nodes outside it behave like nodes outside the lattice.
    """

    n: int
    m: int
    boundary: Boundary = Boundary.TORUS
    mask: Optional[tuple[tuple[bool, ...], ...]] = None

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValidationError(f"lattice dimensions must be positive, got {self.n}x{self.m}")
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        if self.mask is not None:
            if self.boundary is Boundary.TORUS:
                raise ValidationError("a node mask is only supported with free boundary")
            mask = tuple(tuple(bool(v) for v in row) for row in self.mask)
            if len(mask) != self.n or any(len(row) != self.m for row in mask):
                raise ValidationError("mask shape does not match lattice")
            if all(all(row) for row in mask):
                mask = None
            object.__setattr__(self, "mask", mask)

    @classmethod
    def with_mask(cls, mask: np.ndarray) -> "LatticeSpec":
        mask = np.asarray(mask, dtype=bool)
        return cls(mask.shape[0], mask.shape[1], Boundary.FREE, tuple(map(tuple, mask.tolist())))

    @property
    def is_torus(self) -> bool:
        return self.boundary is Boundary.TORUS

    @property
    def mask_array(self) -> np.ndarray:
        if self.mask is None:
            return np.ones((self.n, self.m), dtype=bool)
        return np.array(self.mask, dtype=bool)

    def contains(self, node: Node) -> bool:
        i, j = node
        if not (0 <= i < self.n and 0 <= j < self.m):
            return False
        return self.mask is None or self.mask[i][j]


@dataclass(frozen=True)
class TemplateClique:
    """Template maximal clique, anchored so its minimum row and column are 0."""

    shape: NodeSet

    def __post_init__(self):
        shape = nodeset(self.shape)
        if not shape:
            raise ValidationError("template clique must be non-empty")
        if min(i for i, _ in shape) != 0 or min(j for _, j in shape) != 0:
            raise ValidationError("template clique must be anchored at (0, 0)")
        object.__setattr__(self, "shape", shape)

    @classmethod
    def block(cls, k: int, l: int) -> "TemplateClique":
        if k < 1 or l < 1:
            raise ValidationError(f"block template needs positive size, got {k}x{l}")
        return cls(tuple((i, j) for i in range(k) for j in range(l)))

    @classmethod
    def parse(cls, text: str) -> "TemplateClique":
        """Parse ``"KxL"`` (full block) or a bitmap such as ``"11/10"``."""
        text = text.strip().lower()
        match = re.fullmatch(r"(\d+)\s*x\s*(\d+)", text)
        if match:
            return cls.block(int(match.group(1)), int(match.group(2)))
        rows = re.split(r"[/,;]", text)
        if not rows or any(set(r) - {"0", "1"} for r in rows):
            raise ValidationError(f"cannot parse template {text!r}; use KxL or a bitmap like 11/10")
        nodes = [(i, j) for i, row in enumerate(rows) for j, c in enumerate(row) if c == "1"]
        if not nodes:
            raise ValidationError("template bitmap has no nodes")
        i0 = min(i for i, _ in nodes)
        j0 = min(j for _, j in nodes)
        return cls(tuple((i - i0, j - j0) for i, j in nodes))

    @property
    def k(self) -> int:
        return max(i for i, _ in self.shape) + 1

    @property
    def l(self) -> int:
        return max(j for _, j in self.shape) + 1

    @property
    def size(self) -> int:
        return len(self.shape)

    def transposed(self) -> "TemplateClique":
        return TemplateClique(tuple((j, i) for i, j in self.shape))

    def label(self) -> str:
        if self.size == self.k * self.l:
            return f"{self.k}x{self.l}"
        members = set(self.shape)
        return "/".join(
            "".join("1" if (i, j) in members else "0" for j in range(self.l)) for i in range(self.k)
        )


def translate(s: Iterable[Node], t: int, u: int, spec: LatticeSpec) -> NodeSet:
    if spec.is_torus:
        return nodeset(((i + t) % spec.n, (j + u) % spec.m) for i, j in s)
    return nodeset((i + t, j + u) for i, j in s)


def check_fits(spec: LatticeSpec, tpl: TemplateClique) -> None:
    if tpl.k > spec.n or tpl.l > spec.m:
        raise TemplateTooLargeError(
            f"template {tpl.k}x{tpl.l} does not fit in lattice {spec.n}x{spec.m}"
        )


def anchor_range(spec: LatticeSpec, tpl: TemplateClique) -> list[Node]:
    """Anchors of every template translate that can touch the lattice.

    On the torus this is S itself. For free boundary it is the anchor grid of
    the embedding super-lattice, ``(n + k - 1) x (m + l - 1)`` anchors; any
    translate beyond it misses the lattice entirely.
    """
    if spec.is_torus:
        return [(t, u) for t in range(spec.n) for u in range(spec.m)]
    return [
        (t, u)
        for t in range(-(tpl.k - 1), spec.n)
        for u in range(-(tpl.l - 1), spec.m)
    ]


def maximal_cliques(spec: LatticeSpec, tpl: TemplateClique) -> list[NodeSet]:
    check_fits(spec, tpl)
    if spec.is_torus:
        return [translate(tpl.shape, t, u, spec) for t, u in anchor_range(spec, tpl)]
    out = []
    for t, u in anchor_range(spec, tpl):
        clique = translate(tpl.shape, t, u, spec)
        if all(spec.contains(p) for p in clique):
            out.append(clique)
    return out


class BorderClique(NamedTuple):
    anchor: Node
    inside: NodeSet
    outside: NodeSet

    @property
    def outside_count(self) -> int:
        return len(self.outside)


def border_cliques(spec: LatticeSpec, tpl: TemplateClique) -> list[BorderClique]:
    """Template translates partly inside and partly outside a free lattice."""
    if spec.is_torus:
        raise ValidationError("border cliques only exist for free boundary lattices")
    check_fits(spec, tpl)
    out = []
    for t, u in anchor_range(spec, tpl):
        clique = translate(tpl.shape, t, u, spec)
        inside = tuple(p for p in clique if spec.contains(p))
        if inside and len(inside) < len(clique):
            outside = tuple(p for p in clique if not spec.contains(p))
            out.append(BorderClique((t, u), inside, outside))
    return out
