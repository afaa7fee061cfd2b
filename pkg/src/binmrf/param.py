"""Potential (phi) and interaction (beta) parametrisations and their conversion.

Both vectors are indexed by configuration-class id: entry ``c`` of a phi
vector is the potential shared by every clique configuration in class ``c``,
entry ``c`` of a beta vector is the interaction of the clique shape whose
canonical form is class ``c``'s canonical form (entry 0 is the constant term).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .configsets import ConfigCatalog, anchor, build_catalog, classify
from .errors import ValidationError, WrongCatalogError
from .lattice import LatticeSpec, TemplateClique, check_fits


@dataclass(frozen=True)
class ConversionTable:
    """Intersection and subset counts driving the phi <-> beta recursions.

    ``N[a, b]``: number of maximal cliques whose intersection with a fixed
    placement of class ``a`` falls in class ``b``. ``M[a, b]``: number of
    subsets of class ``a``'s canonical shape that fall in class ``b``.
    """

    spec: LatticeSpec
    catalog: ConfigCatalog
    N: np.ndarray = field(repr=False)
    M: np.ndarray = field(repr=False)

    @property
    def order(self) -> np.ndarray:
        return np.array([c.order for c in self.catalog.classes])


@lru_cache(maxsize=64)
def build_conversion_table(spec: LatticeSpec, cat: ConfigCatalog) -> ConversionTable:
    if not spec.is_torus:
        raise ValidationError("phi/beta conversion is defined on the torus only")
    tpl = cat.template
    check_fits(spec, tpl)
    # below these sizes distinct translates of a shape can coincide on the torus
    if spec.n < 2 * tpl.k - 1 or spec.m < 2 * tpl.l - 1:
        raise ValidationError(
            f"conversion needs a torus of at least {2 * tpl.k - 1}x{2 * tpl.l - 1} "
            f"for a {tpl.k}x{tpl.l} template"
        )
    n, m = spec.n, spec.m
    K = cat.class_count
    N = np.zeros((K, K), dtype=np.int64)
    M = np.zeros((K, K), dtype=np.int64)
    for cls in cat.classes:
        placed = {(i % n, j % m) for i, j in cls.canonical}
        for t in range(n):
            for u in range(m):
                rel = [
                    (di, dj)
                    for di, dj in tpl.shape
                    if ((t + di) % n, (u + dj) % m) in placed
                ]
                N[cls.id, classify(cat, rel)] += 1
        size = len(cls.canonical)
        for code in range(1 << size):
            sub = [p for b, p in enumerate(cls.canonical) if code >> b & 1]
            M[cls.id, classify(cat, sub)] += 1
    for a in range(K):
        same_order = [b for b in range(K) if N[a, b] and cat.classes[b].order >= cat.classes[a].order]
        if same_order != [a]:
            raise ValidationError("torus too small: intersections do not shrink the class")
    N.setflags(write=False)
    M.setflags(write=False)
    return ConversionTable(spec, cat, N, M)


def _recursion_order(table: ConversionTable) -> list[int]:
    return sorted(range(table.catalog.class_count), key=lambda c: table.catalog.classes[c].order)


def beta_to_phi(beta, table: ConversionTable) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    _check_length(beta, table)
    phi = np.zeros_like(beta)
    for lam in _recursion_order(table):
        rhs = table.M[lam] @ beta
        others = table.N[lam].astype(float).copy()
        others[lam] = 0.0
        phi[lam] = (rhs - others @ phi) / table.N[lam, lam]
    return phi


def phi_to_beta(phi, table: ConversionTable) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    _check_length(phi, table)
    beta = np.zeros_like(phi)
    for lam in _recursion_order(table):
        strict = table.M[lam].astype(float).copy()
        strict[lam] = 0.0
        beta[lam] = table.N[lam] @ phi - strict @ beta
    return beta


def _check_length(vec: np.ndarray, table: ConversionTable) -> None:
    if vec.shape != (table.catalog.class_count,):
        raise ValidationError(
            f"vector has length {vec.shape}, catalog has {table.catalog.class_count} classes"
        )


def energy_beta(x: np.ndarray, beta, cat: ConfigCatalog) -> float:
    """Interaction-form energy on a torus image.

    Sums ``beta[c]`` times the number of all-ones translates of class ``c``'s
    canonical shape, with the constant term counted once.
    """
    x = np.asarray(x)
    beta = np.asarray(beta, dtype=float)
    total = float(beta[0])
    for cls in cat.classes[1:]:
        prod = np.ones(x.shape, dtype=bool)
        for di, dj in cls.canonical:
            prod &= np.roll(x, (-di, -dj), axis=(0, 1)).astype(bool)
        total += beta[cls.id] * int(prod.sum())
    return total


_BLOCK_2X2 = TemplateClique.block(2, 2)


def _require_2x2(cat: ConfigCatalog) -> None:
    if cat.template != _BLOCK_2X2:
        raise WrongCatalogError("this embedding is defined for the 2x2 block template")


def ising_phi(omega: float, cat: ConfigCatalog | None = None) -> np.ndarray:
    """2x2-clique potentials reproducing the nearest-neighbour Ising model.

    Each clique carries ``-omega/2`` per disagreeing edge; the level shift is
    ``omega`` so the three distinct values sum to zero.
    """
    cat = cat or build_catalog(_BLOCK_2X2)
    _require_2x2(cat)
    edges = [((0, 0), (0, 1)), ((1, 0), (1, 1)), ((0, 0), (1, 0)), ((0, 1), (1, 1))]
    phi = np.empty(cat.class_count)
    for cls in cat.classes:
        member = set(cls.members[0])
        disagree = sum((a in member) != (b in member) for a, b in edges)
        phi[cls.id] = -omega * disagree / 2 + omega
    return phi


def independence_phi(p: float, cat: ConfigCatalog | None = None) -> np.ndarray:
    """2x2-clique potentials of i.i.d. Bernoulli(p) sites (levels k*alpha/4 - alpha/2)."""
    if not 0.0 < p < 1.0:
        raise ValidationError(f"p must lie in (0, 1), got {p}")
    cat = cat or build_catalog(_BLOCK_2X2)
    _require_2x2(cat)
    alpha = math.log(p / (1.0 - p))
    return np.array([alpha * c.order / 4 - alpha / 2 for c in cat.classes])


def canonical_label(cat: ConfigCatalog, class_id: int) -> str:
    tpl = cat.template
    return cat.classes[class_id].bitmap(tpl.k, tpl.l)


__all__ = [
    "ConversionTable",
    "anchor",
    "beta_to_phi",
    "build_conversion_table",
    "canonical_label",
    "energy_beta",
    "independence_phi",
    "ising_phi",
    "phi_to_beta",
]
