"""Partition prior p({C_1..C_r}) and the sum-to-zero Gaussian on group values.

The partition mass is the geometric mix p1^(1-gamma) p2^gamma of a prior that
is uniform over partitions (p1) and one that is uniform over the number of
groups (p2 = 1 / (K * S(K, r)) with K classes).  Because the mass depends on
a partition only through r, the global normaliser is an exact sum over r.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import ValidationError

LOG_2PI = math.log(2.0 * math.pi)
SUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters; defaults sigma_phi = 10 and gamma = 0.5."""

    class_count: int
    gamma: float = 0.5
    sigma_phi: float = 10.0
    sigma_theta: float = 10.0

    def __post_init__(self):
        if self.class_count < 1:
            raise ValidationError("prior.class_count must be at least 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValidationError(f"prior.gamma must lie in [0, 1], got {self.gamma}")
        if not self.sigma_phi > 0:
            raise ValidationError(f"prior.sigma_phi must be positive, got {self.sigma_phi}")
        if not self.sigma_theta > 0:
            raise ValidationError(f"prior.sigma_theta must be positive, got {self.sigma_theta}")


# -- Stirling numbers ----------------------------------------------------------

def stirling2_sum(n: int, r: int) -> int:
    """Alternating-sum formula (1/r!) sum_i C(r,i) (-1)^(r-i) i^n."""
    _check_stirling(n, r)
    total = sum(math.comb(r, i) * (-1) ** (r - i) * i ** n for i in range(r + 1))
    return total // math.factorial(r)


@lru_cache(maxsize=None)
def _stirling_row(n: int) -> tuple[int, ...]:
    if n == 0:
        return (1,)
    prev = _stirling_row(n - 1)
    row = [0] * (n + 1)
    for k in range(1, n + 1):
        row[k] = k * (prev[k] if k < n else 0) + prev[k - 1]
    return tuple(row)


def stirling2(n: int, r: int) -> int:
    """Number of partitions of n items into r non-empty blocks (exact)."""
    _check_stirling(n, r)
    if n > 1000:
        return stirling2_sum(n, r)
    for i in range(0, n, 200):  # warm the cache without deep recursion
        _stirling_row(i)
    return _stirling_row(n)[r]


def _check_stirling(n: int, r: int):
    if not (isinstance(n, int) and isinstance(r, int)) or not 1 <= r <= n:
        raise ValidationError(f"stirling2 needs 1 <= r <= n, got n={n}, r={r}")


def bell(n: int) -> int:
    return sum(stirling2(n, r) for r in range(1, n + 1))


# -- partition prior -------------------------------------------------------------

def _log_mass(K: int, r: int, gamma: float) -> float:
    """Unnormalised log mass of one partition with r groups."""
    if gamma == 0.0:
        return 0.0
    return gamma * (-math.log(K) - math.log(stirling2(K, r)))


@lru_cache(maxsize=256)
def _log_r_weights(K: int, gamma: float) -> np.ndarray:
    """log(S(K,r) * mass(r)) for r = 1..K."""
    return np.array([math.log(stirling2(K, r)) + _log_mass(K, r, gamma) for r in range(1, K + 1)])


def log_partition_normaliser(cfg: PriorConfig) -> float:
    """log of the sum of unnormalised masses over every set partition."""
    w = _log_r_weights(cfg.class_count, float(cfg.gamma))
    top = w.max()
    return float(top + math.log(np.exp(w - top).sum()))


def log_prior_partition(groups: Sequence[Sequence[int]], cfg: PriorConfig) -> float:
    """Normalised log prior probability of one partition of the classes."""
    _check_partition(groups, cfg.class_count)
    return _log_mass(cfg.class_count, len(groups), float(cfg.gamma)) - log_partition_normaliser(cfg)


def log_prior_partition_r(r: int, cfg: PriorConfig) -> float:
    """Same as log_prior_partition for any partition with r groups."""
    if not 1 <= r <= cfg.class_count:
        raise ValidationError(f"r must lie in 1..{cfg.class_count}, got {r}")
    return _log_mass(cfg.class_count, r, float(cfg.gamma)) - log_partition_normaliser(cfg)


def prior_r_probabilities(cfg: PriorConfig) -> np.ndarray:
    """Induced p(r) for r = 1..K (index r-1)."""
    w = _log_r_weights(cfg.class_count, float(cfg.gamma))
    p = np.exp(w - w.max())
    return p / p.sum()


def _check_partition(groups, K: int):
    seen = sorted(c for g in groups for c in g)
    if any(len(g) == 0 for g in groups) or seen != list(range(K)):
        raise ValidationError(f"groups are not a partition of {K} classes")


# -- group values ----------------------------------------------------------------

def log_prior_values(values: Sequence[float], cfg: PriorConfig) -> float:
    """Ambient product of N(0, sigma_phi^2) densities on the sum-to-zero surface."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError("values must be a non-empty vector")
    if abs(v.sum()) > SUM_TOLERANCE:
        raise ValidationError(f"values must sum to zero, sum is {v.sum():.3e}")
    s2 = cfg.sigma_phi ** 2
    return float(-0.5 * np.sum(v * v) / s2 - v.size * (0.5 * LOG_2PI + math.log(cfg.sigma_phi)))


def log_values_normaliser(r: int, cfg: PriorConfig) -> float:
    """Correction turning the ambient product into a proper density.

    The ambient product integrates to N(0; 0, r sigma^2) over the free
    coordinates phi_1..phi_{r-1}; adding this term gives the exact density of
    iid Gaussians conditioned on a zero sum.
    """
    return 0.5 * (LOG_2PI + math.log(r) + 2.0 * math.log(cfg.sigma_phi))


def log_prior_values_conditional(values: Sequence[float], cfg: PriorConfig) -> float:
    return log_prior_values(values, cfg) + log_values_normaliser(len(values), cfg)


def log_prior_theta(theta: Sequence[float], cfg: PriorConfig) -> float:
    t = np.asarray(theta, dtype=float)
    s = cfg.sigma_theta
    return float(-0.5 * np.sum(t * t) / s ** 2 - t.size * (0.5 * LOG_2PI + math.log(s)))


def log_prior(z, cfg: PriorConfig) -> float:
    """Full log prior of a PartitionState (partition, values and coefficients)."""
    return (log_prior_partition_r(z.r, cfg)
            + log_prior_values_conditional(z.values, cfg)
            + log_prior_theta(z.theta, cfg))


# -- direct simulation -------------------------------------------------------------

def sample_set_partition(K: int, r: int, rng: np.random.Generator) -> list[list[int]]:
    """Uniform draw from the S(K, r) partitions of 0..K-1 into r blocks."""
    _check_stirling(K, r)
    singleton = [False] * K
    k = r
    for n in range(K, 0, -1):
        if k == n:
            singleton[:n] = [True] * n
            break
        if k == 0:
            raise AssertionError("unreachable")
        p_new = stirling2(n - 1, k - 1) / stirling2(n, k) if k > 1 else 0.0
        if rng.random() < p_new:
            singleton[n - 1] = True
            k -= 1
    blocks: list[list[int]] = []
    for item in range(K):
        if singleton[item]:
            blocks.append([item])
        else:
            blocks[int(rng.integers(len(blocks)))].append(item)
    return blocks


def sample_prior(catalog, cfg: PriorConfig, rng: np.random.Generator, n_theta: int = 0):
    """One exact draw of a PartitionState from the prior."""
    from .model import PartitionState

    K = cfg.class_count
    r = int(rng.choice(K, p=prior_r_probabilities(cfg))) + 1
    groups = sample_set_partition(K, r, rng)
    v = rng.normal(0.0, cfg.sigma_phi, size=r)
    v -= v.mean()
    theta = rng.normal(0.0, cfg.sigma_theta, size=n_theta)
    return PartitionState(catalog, tuple(tuple(g) for g in groups), tuple(v), tuple(theta))
