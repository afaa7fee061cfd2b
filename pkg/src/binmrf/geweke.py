"""Successive-conditional (Geweke) validation of the sampler.

Alternates one sampler iteration for z given x with an exact draw of x given
z.  If the kernels leave the posterior invariant, the z marginals of this
chain equal those of direct prior draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .configsets import ConfigCatalog
from .lattice import LatticeSpec
from .likelihood import BruteForceEngine
from .model import PartitionState
from .prior import PriorConfig, sample_prior
from .sampler import ProposalTree, SamplerConfig, kernels_for, sampler_iteration, stream

STATISTICS = ("r", "max_abs_value", "sum_sq_values")
X_STREAM = 7  # kernel slot reserved for the exact x draws


def summary(z: PartitionState) -> tuple[float, float, float]:
    v = np.asarray(z.values)
    return float(z.r), float(np.abs(v).max()), float(np.sum(v * v))


def successive_conditional(spec: LatticeSpec, catalog: ConfigCatalog, prior: PriorConfig,
                           cfg: SamplerConfig, draws: int) -> np.ndarray:
    """Statistics of ``draws`` successive-conditional steps, shape (draws, 3)."""
    engine = BruteForceEngine(spec, catalog)
    enum = engine.enumeration
    rng0 = stream(cfg.seed, 0, X_STREAM)
    z = sample_prior(catalog, prior, rng0)
    x = enum.image(enum.sample_index(z.phi, rng0), spec)
    tree = ProposalTree(x, cfg, engine, prior) if cfg.tree_depth > 1 else None
    out = np.empty((draws, len(STATISTICS)))
    for it in range(1, draws + 1):
        if tree is None:
            z, _ = sampler_iteration(x, z, it, cfg, engine, prior)
        else:
            # one tree per iteration so that x stays fixed within it
            tree.x = x
            steps = [(it, k) for k in kernels_for(z)]
            for pos in range(0, len(steps), cfg.tree_depth):
                path, _ = tree.run(z, steps[pos:pos + cfg.tree_depth])
                z = path[-1]
        rng = stream(cfg.seed, it, X_STREAM)
        x = enum.image(enum.sample_index(z.phi, rng), spec)
        out[it - 1] = summary(z)
    return out


def prior_draws(catalog: ConfigCatalog, prior: PriorConfig, draws: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.array([summary(sample_prior(catalog, prior, rng)) for _ in range(draws)])


def batch_means_se(series: np.ndarray, batches: int = 50) -> float:
    """Standard error of the mean of an autocorrelated series."""
    size = len(series) // batches
    means = series[: size * batches].reshape(batches, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(batches))


@dataclass(frozen=True)
class GewekeResult:
    statistic: str
    chain_mean: float
    prior_mean: float
    z: float
    p_value: float

    def passed(self, level: float = 0.01) -> bool:
        return self.p_value >= level


def compare(chain: np.ndarray, direct: np.ndarray) -> list[GewekeResult]:
    """Two-sample z-tests on means; the chain side uses batch-means errors."""
    results = []
    for col, name in enumerate(STATISTICS):
        a, b = chain[:, col], direct[:, col]
        se = np.hypot(batch_means_se(a), b.std(ddof=1) / np.sqrt(len(b)))
        zval = (a.mean() - b.mean()) / se if se > 0 else 0.0
        results.append(GewekeResult(name, float(a.mean()), float(b.mean()), float(zval),
                                    float(2 * sps.norm.sf(abs(zval)))))
    return results
