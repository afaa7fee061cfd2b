"""Reversible jump MCMC over partition states.

One iteration applies, in fixed order, a value random walk, a configuration
set move, a split/merge jump and (when covariates are present) a covariate
random walk.  Every (iteration, kernel) pair draws from its own random stream,
so the proposal tree reproduces the sequential chain exactly on its realised
path.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import EngineError, ValidationError
from .likelihood import LikelihoodEngine
from .model import BinaryImage, PartitionState
from .prior import PriorConfig, log_prior

log = logging.getLogger(__name__)

KERNELS = ("value", "move", "split_merge", "covariate")
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SamplerConfig:
    """Chain settings; sigma 0.3 and covariate step 0.1 by default."""

    iterations: int = 1000
    sigma: float = 0.3
    covariate_step: float = 0.1
    thinning: int = 1
    seed: int = 0
    tree_depth: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValidationError(f"sampler.sigma must be positive, got {self.sigma}")
        if not self.covariate_step > 0:
            raise ValidationError("sampler.covariate_step must be positive")
        if self.iterations < 0:
            raise ValidationError("sampler.iterations must be non-negative")
        if self.thinning < 1:
            raise ValidationError("sampler.thinning must be at least 1")
        if self.tree_depth < 1:
            raise ValidationError("sampler.tree_depth must be at least 1")
        if self.checkpoint_every < 0:
            raise ValidationError("sampler.checkpoint_every must be non-negative")
        if self.seed < 0:
            raise ValidationError("sampler.seed must be non-negative")


@dataclass(frozen=True)
class Proposal:
    state: PartitionState
    log_q: float = 0.0  # log q(z | z*) - log q(z* | z)
    log_jacobian: float = 0.0
    kind: str = ""
    noop: bool = False


@dataclass
class Counters:
    proposed: dict = field(default_factory=lambda: {k: 0 for k in KERNELS})
    accepted: dict = field(default_factory=lambda: {k: 0 for k in KERNELS})

    def update(self, kernel: str, accepted: Optional[bool]):
        self.proposed[kernel] += 1
        if accepted:
            self.accepted[kernel] += 1

    def rates(self) -> dict:
        return {k: (self.accepted[k] / self.proposed[k] if self.proposed[k] else float("nan")) for k in KERNELS}

    def copy(self) -> "Counters":
        return Counters(dict(self.proposed), dict(self.accepted))


@dataclass(frozen=True)
class ChainRecord:
    iteration: int
    state: PartitionState
    accepted: dict  # kernel -> True / False / None (no-op) for this iteration
    counters: Counters
    log_posterior: float

    @property
    def theta(self):
        return self.state.theta


def stream(seed: int, iteration: int, kernel: int) -> np.random.Generator:
    """Independent generator for one (iteration, kernel) step."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(iteration, kernel)))


def _recentre(v: np.ndarray) -> np.ndarray:
    s = v.sum()
    return v - s / v.size if s != 0.0 else v


# -- kernels --------------------------------------------------------------------

def propose_value_walk(z: PartitionState, rng: np.random.Generator, sigma: float) -> Proposal:
    eps = rng.normal(0.0, sigma)
    i = int(rng.integers(z.r))
    v = np.asarray(z.values) - eps / z.r
    v[i] += eps
    return Proposal(z.with_values(_recentre(v)), kind="value")


def move_weights(z: PartitionState) -> np.ndarray:
    """Normalised q(i, j) proportional to exp(-(phi_i - phi_j)^2), |C_i| >= 2, i != j."""
    v = np.asarray(z.values)
    w = np.exp(-np.subtract.outer(v, v) ** 2)
    np.fill_diagonal(w, 0.0)
    sizes = np.array([len(g) for g in z.groups])
    w[sizes < 2, :] = 0.0
    total = w.sum()
    return w / total if total > 0 else w


def _group_of(z: PartitionState, c: int) -> int:
    return int(z.class_to_group[c])


def propose_move(z: PartitionState, rng: np.random.Generator) -> Proposal:
    w = move_weights(z)
    if not w.any():
        return Proposal(z, kind="move", noop=True)
    flat = int(rng.choice(w.size, p=w.ravel()))
    i, j = divmod(flat, z.r)
    src = z.groups[i]
    c = src[int(rng.integers(len(src)))]
    groups = [list(g) for g in z.groups]
    groups[i].remove(c)
    groups[j].append(c)
    new = PartitionState(z.catalog, tuple(map(tuple, groups)), z.values, z.theta)
    w_new = move_weights(new)
    ri = _group_of(new, c)
    rj = _group_of(new, groups[i][0])
    log_q = (math.log(w_new[ri, rj]) - math.log(len(groups[j]))) - (math.log(w[i, j]) - math.log(len(src)))
    return Proposal(new, log_q=log_q, kind="move")


def split_probability(z: PartitionState) -> float:
    """Probability of choosing the split direction from z."""
    K = z.catalog.class_count
    if z.r == K:
        return 0.0
    if not any(len(g) == 1 for g in z.groups):
        return 1.0
    return 0.5


def merge_weights(z: PartitionState) -> np.ndarray:
    """Normalised q(i, j) proportional to exp(-(phi_i - phi_j)^2) with C_i a singleton."""
    v = np.asarray(z.values)
    w = np.exp(-np.subtract.outer(v, v) ** 2)
    np.fill_diagonal(w, 0.0)
    sizes = np.array([len(g) for g in z.groups])
    w[sizes != 1, :] = 0.0
    total = w.sum()
    return w / total if total > 0 else w


def _log_normal(x: float, sigma: float) -> float:
    return -0.5 * (x / sigma) ** 2 - math.log(sigma) - LOG_SQRT_2PI


def split(z: PartitionState, i: int, c: int, eps: float) -> PartitionState:
    """Split class c out of group i as a new group; deterministic part of the jump."""
    r = z.r
    v = np.asarray(z.values)
    s = (v[i] + eps) / (r + 1)
    new_v = np.append(v - s, v[i] + eps - s)
    groups = [list(g) for g in z.groups]
    groups[i].remove(c)
    groups.append([c])
    return PartitionState(z.catalog, tuple(map(tuple, groups)), tuple(_recentre(new_v)), z.theta)


def merge(z: PartitionState, i: int, j: int) -> PartitionState:
    """Merge singleton group i into group j."""
    r = z.r
    v = np.asarray(z.values)
    shift = v[i] / (r - 1)
    groups = [list(g) for g in z.groups]
    groups[j].extend(groups[i])
    keep = [k for k in range(r) if k != i]
    return PartitionState(
        z.catalog,
        tuple(tuple(groups[k]) for k in keep),
        tuple(_recentre(v[keep] + shift)),
        z.theta,
    )


def propose_split_merge(z: PartitionState, rng: np.random.Generator, sigma: float) -> Proposal:
    p_split = split_probability(z)
    if p_split == 0.0 and z.r < 2:
        return Proposal(z, kind="split_merge", noop=True)
    if p_split == 1.0 or (p_split > 0.0 and rng.random() < p_split):
        return _propose_split(z, rng, sigma, p_split)
    return _propose_merge(z, rng, sigma, 1.0 - p_split)


def _propose_split(z, rng, sigma, p_dir) -> Proposal:
    donors = [gi for gi, g in enumerate(z.groups) if len(g) >= 2]
    i = donors[int(rng.integers(len(donors)))]
    g = z.groups[i]
    c = g[int(rng.integers(len(g)))]
    eps = rng.normal(0.0, sigma)
    new = split(z, i, c, eps)
    log_fwd = math.log(p_dir) - math.log(len(donors)) - math.log(len(g)) + _log_normal(eps, sigma)
    a = _group_of(new, c)
    b = _group_of(new, next(m for m in g if m != c))
    w_rev = merge_weights(new)
    log_rev = math.log(1.0 - split_probability(new)) + math.log(w_rev[a, b])
    return Proposal(new, log_q=log_rev - log_fwd, log_jacobian=math.log(z.r / (z.r + 1)), kind="split")


def _propose_merge(z, rng, sigma, p_dir) -> Proposal:
    w = merge_weights(z)
    flat = int(rng.choice(w.size, p=w.ravel()))
    i, j = divmod(flat, z.r)
    new = merge(z, i, j)
    c = z.groups[i][0]
    eps = z.values[i] - z.values[j]
    log_fwd = math.log(p_dir) + math.log(w[i, j])
    merged = z.groups[j] + z.groups[i]
    donors = sum(1 for gg in new.groups if len(gg) >= 2)
    log_rev = (math.log(split_probability(new)) - math.log(donors) - math.log(len(merged))
               + _log_normal(eps, sigma))
    return Proposal(new, log_q=log_rev - log_fwd, log_jacobian=math.log(z.r / (z.r - 1)), kind="merge")


def propose_covariate(z: PartitionState, rng: np.random.Generator, step: float) -> Proposal:
    if not z.theta:
        return Proposal(z, kind="covariate", noop=True)
    j = int(rng.integers(len(z.theta)))
    theta = list(z.theta)
    theta[j] += rng.normal(0.0, step)
    return Proposal(z.with_theta(theta), kind="covariate")


def propose(kernel: str, z: PartitionState, rng: np.random.Generator, cfg: SamplerConfig) -> Proposal:
    if kernel == "value":
        return propose_value_walk(z, rng, cfg.sigma)
    if kernel == "move":
        return propose_move(z, rng)
    if kernel == "split_merge":
        return propose_split_merge(z, rng, cfg.sigma)
    if kernel == "covariate":
        return propose_covariate(z, rng, cfg.covariate_step)
    raise ValidationError(f"unknown kernel {kernel!r}")


# -- acceptance -------------------------------------------------------------------

def log_acceptance(prop: Proposal, z: PartitionState, llr: float, prior: PriorConfig) -> float:
    """log of the MH ratio; -inf for no-ops."""
    if prop.noop:
        return -math.inf
    if prop.state == z:
        return 0.0
    return llr + log_prior(prop.state, prior) - log_prior(z, prior) + prop.log_q + prop.log_jacobian


def _evaluate(prop: Proposal, z: PartitionState, x, engine: LikelihoodEngine, prior, rng) -> float:
    if prop.noop or prop.state == z:
        return 0.0
    try:
        llr = engine.log_lik_ratio(x, prop.state, z, rng)
    except (ArithmeticError, EngineError) as exc:
        if not engine.stochastic:
            raise
        log.warning("auxiliary draw failed (%s); rejecting", exc)
        return -math.inf
    return log_acceptance(prop, z, llr, prior)


def mh_step(prop: Proposal, z: PartitionState, x: BinaryImage, engine: LikelihoodEngine,
            prior: PriorConfig, rng: np.random.Generator) -> tuple[PartitionState, Optional[bool]]:
    """Accept or reject one proposal; returns the new state and the decision (None for no-ops)."""
    log_alpha = _evaluate(prop, z, x, engine, prior, rng)
    if prop.noop:
        return z, None
    u = rng.random()
    if log_alpha >= 0.0 or (u > 0.0 and math.log(u) < log_alpha):
        return prop.state, True
    return z, False


def kernels_for(z: PartitionState) -> list[int]:
    ks = [0, 1, 2]
    if z.theta:
        ks.append(3)
    return ks


def sampler_step(x, z, iteration: int, kernel: int, cfg: SamplerConfig, engine, prior):
    rng = stream(cfg.seed, iteration, kernel)
    prop = propose(KERNELS[kernel], z, rng, cfg)
    return mh_step(prop, z, x, engine, prior, rng)


def sampler_iteration(x, z, iteration: int, cfg: SamplerConfig, engine, prior, counters: Optional[Counters] = None):
    """One full iteration (every kernel once); returns the new state and decisions."""
    flags = {}
    for k in kernels_for(z):
        z, acc = sampler_step(x, z, iteration, k, cfg, engine, prior)
        flags[KERNELS[k]] = acc
        if counters is not None:
            counters.update(KERNELS[k], acc)
    return z, flags


def _record(it, z, flags, counters, x, engine, prior) -> ChainRecord:
    lp = engine.log_likelihood(x, z) + log_prior(z, prior)
    return ChainRecord(it, z, flags, counters.copy(), float(lp))


def default_init(catalog, n_theta: int = 0) -> PartitionState:
    return PartitionState.single_group(catalog, (0.0,) * n_theta)


def run_chain(x: BinaryImage, cfg: SamplerConfig, engine: LikelihoodEngine, prior: PriorConfig,
              init: Optional[PartitionState] = None, start: int = 0, counters: Optional[Counters] = None,
              checkpoint: Optional[Callable[[int, PartitionState, Counters], None]] = None,
              ) -> Iterator[ChainRecord]:
    """Sequential chain; yields the initial state then every thinned iteration.

    ``start`` resumes after a checkpointed iteration: the random streams are
    keyed by iteration, so a resumed run continues the original chain.
    """
    if cfg.tree_depth > 1:
        yield from run_chain_tree(x, cfg, engine, prior, init, start, counters, checkpoint)
        return
    z = init if init is not None else _init_for(engine)
    counters = counters.copy() if counters is not None else Counters()
    if start == 0:
        yield _record(0, z, {}, counters, x, engine, prior)
    for it in range(start + 1, cfg.iterations + 1):
        z, flags = sampler_iteration(x, z, it, cfg, engine, prior, counters)
        if it % cfg.thinning == 0:
            yield _record(it, z, flags, counters, x, engine, prior)
        if checkpoint is not None and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
            checkpoint(it, z, counters)


def _init_for(engine: LikelihoodEngine) -> PartitionState:
    n_theta = engine.cov.K if engine.cov is not None else 0
    return default_init(engine.catalog, n_theta)


# -- proposal tree ------------------------------------------------------------------

@dataclass
class _Node:
    state: PartitionState
    step: tuple[int, int]
    rng: Optional[np.random.Generator] = None
    prop: Optional[Proposal] = None
    log_alpha: float = -math.inf
    u: float = 1.0


def _accepts(node: _Node) -> Optional[bool]:
    if node.prop.noop:
        return None
    return node.log_alpha >= 0.0 or (node.u > 0.0 and math.log(node.u) < node.log_alpha)


class ProposalTree:
    """Depth-d tree of speculative proposals evaluated concurrently.

    Level l holds the 2^l states reachable after l accept/reject decisions.
    All proposals are generated first (they do not depend on decisions), the
    candidate evaluations then run in a thread pool, and finally the realised
    path is walked.  Nodes at one level share the stream of their step, so
    the realised path is draw-for-draw the sequential chain.
    """

    def __init__(self, x, cfg: SamplerConfig, engine, prior, pool: Optional[ThreadPoolExecutor] = None):
        self.x, self.cfg, self.engine, self.prior = x, cfg, engine, prior
        self.pool = pool
        self.evaluations = 0

    def _eval(self, node: _Node):
        node.log_alpha = _evaluate(node.prop, node.state, self.x, self.engine, self.prior, node.rng)
        if not node.prop.noop:
            node.u = node.rng.random()

    def run(self, z: PartitionState, steps: Sequence[tuple[int, int]]):
        """Advance through ``steps``; returns the states and decisions along the realised path."""
        levels: list[list[_Node]] = []
        states = [z]
        for it, k in steps:
            nodes = []
            for s in states:
                rng = stream(self.cfg.seed, it, k)
                nodes.append(_Node(s, (it, k), rng, propose(KERNELS[k], s, rng, self.cfg)))
            levels.append(nodes)
            states = [c for n in nodes for c in (n.state, n.prop.state)]
        work = [n for lvl in levels for n in lvl]
        self.evaluations += sum(1 for n in work if not n.prop.noop and n.prop.state != n.state)
        if self.pool is not None and len(work) > 1:
            try:
                list(self.pool.map(self._eval, work))
            except Exception as exc:  # noqa: BLE001 - fall back to a plain sequential pass
                log.warning("concurrent evaluation failed (%s); retrying sequentially", exc)
                for n in work:
                    n.rng = stream(self.cfg.seed, *n.step)
                    n.prop = propose(KERNELS[n.step[1]], n.state, n.rng, self.cfg)
                    self._eval(n)
        else:
            for n in work:
                self._eval(n)
        path, decisions = [], []
        idx = 0
        for lvl in levels:
            node = lvl[idx]
            acc = _accepts(node)
            decisions.append(acc)
            path.append(node.prop.state if acc else node.state)
            idx = 2 * idx + (1 if acc else 0)
        return path, decisions


def run_chain_tree(x: BinaryImage, cfg: SamplerConfig, engine: LikelihoodEngine, prior: PriorConfig,
                   init: Optional[PartitionState] = None, start: int = 0, counters: Optional[Counters] = None,
                   checkpoint=None, max_workers: Optional[int] = None) -> Iterator[ChainRecord]:
    """Chain driven by depth-d proposal trees; same records as the sequential chain."""
    d = cfg.tree_depth
    z = init if init is not None else _init_for(engine)
    counters = counters.copy() if counters is not None else Counters()
    ks = kernels_for(z)
    if start == 0:
        yield _record(0, z, {}, counters, x, engine, prior)
    pool = ThreadPoolExecutor(max_workers=max_workers or min(8, 2 ** d)) if d > 1 else None
    tree = ProposalTree(x, cfg, engine, prior, pool)
    steps = ((it, k) for it in range(start + 1, cfg.iterations + 1) for k in ks)
    flags: dict = {}
    try:
        while True:
            block = [s for _, s in zip(range(d), steps)]
            if not block:
                break
            path, decisions = tree.run(z, block)
            for (it, k), acc, state in zip(block, decisions, path):
                counters.update(KERNELS[k], acc)
                flags[KERNELS[k]] = acc
                if k == ks[-1]:
                    if it % cfg.thinning == 0:
                        yield _record(it, state, flags, counters, x, engine, prior)
                    if checkpoint is not None and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
                        checkpoint(it, state, counters)
                    flags = {}
            z = path[-1]
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
