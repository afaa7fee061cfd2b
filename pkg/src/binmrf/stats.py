"""Posterior summaries: image statistics, grouping probabilities, p(r), beta intervals."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .lattice import LatticeSpec, TemplateClique
from .likelihood import gibbs_sample
from .model import BinaryImage, CovariateField, PartitionState
from .param import build_conversion_table, phi_to_beta


@dataclass(frozen=True)
class Statistic:
    """An image statistic g(x).

    ``kind`` is one of ``sum_ones``, ``equal_vertical``, ``equal_horizontal``
    or ``pattern``; a pattern statistic counts maximal cliques whose exact
    configuration equals ``pattern`` (a k x l 0/1 grid, one fixed orientation).
    """

    kind: str
    pattern: Optional[tuple[tuple[int, ...], ...]] = None

    KINDS = ("sum_ones", "equal_vertical", "equal_horizontal", "pattern")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValidationError(f"unknown statistic {self.kind!r}")
        if (self.kind == "pattern") != (self.pattern is not None):
            raise ValidationError("a pattern is required for, and only for, pattern statistics")
        if self.pattern is not None:
            rows = {len(r) for r in self.pattern}
            if len(rows) != 1 or not self.pattern or any(v not in (0, 1) for r in self.pattern for v in r):
                raise ValidationError("pattern must be a rectangular 0/1 grid")

    @classmethod
    def parse(cls, text: str) -> "Statistic":
        """``sum_ones``, ``equal_vertical``, ``equal_horizontal`` or ``pattern:11/10``."""
        if text.startswith("pattern:"):
            rows = text.split(":", 1)[1].split("/")
            try:
                grid = tuple(tuple(int(ch) for ch in row) for row in rows)
            except ValueError:
                raise ValidationError(f"bad pattern {text!r}") from None
            return cls("pattern", grid)
        return cls(text)

    @property
    def name(self) -> str:
        if self.kind == "pattern":
            return "pattern_" + "-".join("".join(map(str, r)) for r in self.pattern)
        return self.kind

    def template(self) -> TemplateClique:
        return TemplateClique.block(len(self.pattern), len(self.pattern[0]))


DEFAULT_STATISTICS = (
    Statistic("sum_ones"),
    Statistic("equal_vertical"),
    Statistic("equal_horizontal"),
    Statistic("pattern", ((1, 1), (1, 1))),
    Statistic("pattern", ((1, 0), (0, 1))),
    Statistic("pattern", ((1, 1), (1, 0))),
)


def _equal_pairs(x: BinaryImage, axis: int) -> int:
    d = x.data.astype(np.int64)
    active = x.spec.mask_array
    if x.spec.is_torus:
        return int(np.sum(d == np.roll(d, -1, axis=axis)))
    if axis == 0:
        a, b, ma, mb = d[:-1], d[1:], active[:-1], active[1:]
    else:
        a, b, ma, mb = d[:, :-1], d[:, 1:], active[:, :-1], active[:, 1:]
    return int(np.sum((a == b) & ma & mb))


def statistic(x: BinaryImage, stat: Statistic) -> int:
    if stat.kind == "sum_ones":
        return int(x.data[x.spec.mask_array].sum())
    if stat.kind == "equal_vertical":
        return _equal_pairs(x, 0)
    if stat.kind == "equal_horizontal":
        return _equal_pairs(x, 1)
    tpl = stat.template()
    if tpl.k > x.spec.n or tpl.l > x.spec.m:
        raise ValidationError("pattern is larger than the image")
    d = x.data.astype(np.int64)
    active = x.spec.mask_array
    if x.spec.is_torus:
        match = np.ones_like(d, dtype=bool)
        for (di, dj), v in zip(tpl.shape, np.ravel(stat.pattern)):
            match &= np.roll(d, (-di, -dj), axis=(0, 1)) == v
        return int(match.sum())
    n_a, m_a = x.spec.n - tpl.k + 1, x.spec.m - tpl.l + 1
    match = np.ones((n_a, m_a), dtype=bool)
    for (di, dj), v in zip(tpl.shape, np.ravel(stat.pattern)):
        match &= (d[di:di + n_a, dj:dj + m_a] == v) & active[di:di + n_a, dj:dj + m_a]
    return int(match.sum())


def pair_matrix(states: Sequence[PartitionState]) -> np.ndarray:
    """Fraction of states in which classes a and b share a group."""
    if not states:
        raise ValidationError("pair_matrix needs at least one state")
    K = states[0].catalog.class_count
    acc = np.zeros((K, K))
    for z in states:
        if z.catalog.class_count != K:
            raise ValidationError("states come from different catalogs")
        g = z.class_to_group
        acc += g[:, None] == g[None, :]
    return acc / len(states)


def r_histogram(states: Sequence[PartitionState]) -> np.ndarray:
    """Posterior frequency of r = 1..K (index r - 1)."""
    if not states:
        raise ValidationError("r_histogram needs at least one state")
    K = states[0].catalog.class_count
    return np.bincount([z.r for z in states], minlength=K + 1)[1:] / len(states)


def partition_frequencies(states: Sequence[PartitionState]) -> list[tuple[tuple[tuple[int, ...], ...], float]]:
    """Groupings sorted by decreasing posterior frequency."""
    counts = Counter(z.groups for z in states)
    return [(g, c / len(states)) for g, c in counts.most_common()]


def beta_samples(states: Sequence[PartitionState], spec: LatticeSpec) -> np.ndarray:
    """beta vectors of the states, using the torus conversion table of the same n x m."""
    if not states:
        return np.empty((0, 0))
    torus = LatticeSpec(spec.n, spec.m)
    table = build_conversion_table(torus, states[0].catalog)
    return np.array([phi_to_beta(z.phi, table) for z in states])


@dataclass(frozen=True)
class BetaSummary:
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def beta_posterior(states: Sequence[PartitionState], spec: LatticeSpec, level: float = 0.95) -> BetaSummary:
    """Posterior means and central credible intervals of every beta coefficient."""
    b = beta_samples(states, spec)
    if b.size == 0:
        raise ValidationError("beta_posterior needs at least one state")
    tail = 50.0 * (1.0 - level)
    lo, hi = np.percentile(b, [tail, 100.0 - tail], axis=0)
    return BetaSummary(b.mean(axis=0), lo, hi)


def posterior_predictive(states: Sequence[PartitionState], spec: LatticeSpec,
                         statistics: Sequence[Statistic] = DEFAULT_STATISTICS,
                         draws_per_state: int = 1, sweeps: int = 100,
                         rng: Optional[np.random.Generator] = None,
                         cov: Optional[CovariateField] = None) -> dict[str, np.ndarray]:
    """Simulate images from p(x | z) for each state and evaluate the statistics."""
    rng = rng if rng is not None else np.random.default_rng()
    out: dict[str, list] = {s.name: [] for s in statistics}
    for z in states:
        for _ in range(draws_per_state):
            x = gibbs_sample(z, spec, cov, sweeps=sweeps, rng=rng)
            for s in statistics:
                out[s.name].append(statistic(x, s))
    return {k: np.asarray(v, dtype=np.int64) for k, v in out.items()}
