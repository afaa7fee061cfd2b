"""Log-likelihood engines for p(x | z).

Normalising constants are stored as ``log_z = log sum_x exp(U(x))`` so that
``log p(x | z) = U(x | z) - log_z``.
"""

from __future__ import annotations

import logging
import threading
from collections import OrderedDict
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.special import expit, logsumexp

from .configsets import ConfigCatalog
from .errors import CapExceededError, ValidationError
from .lattice import LatticeSpec
from .model import (
    BinaryImage,
    CliqueLayout,
    CovariateField,
    PartitionState,
    covariate_field,
    get_layout,
)

log = logging.getLogger(__name__)

BRUTE_FORCE_MAX_NODES = 26
TRANSFER_MAX_HEIGHT = 12
CHUNK_BITS = 16
DEFAULT_EXCHANGE_SWEEPS = 50


def state_bits(start: int, stop: int, V: int) -> np.ndarray:
    """Rows are the binary expansions (node v <- bit v) of start..stop-1."""
    idx = np.arange(start, stop, dtype=np.int64)[:, None]
    return ((idx >> np.arange(V, dtype=np.int64)) & 1).astype(np.uint8)


class Enumeration:
    """Exhaustive enumeration of all 2^V images of one lattice.

    Without covariates the energy depends on an image only through its class
    weight vector, so the states are compressed to unique feature rows with
    multiplicities; ``state_row`` maps every state to its row.
    """

    def __init__(self, layout: CliqueLayout):
        if layout.V > BRUTE_FORCE_MAX_NODES:
            raise CapExceededError(
                f"brute force needs at most {BRUTE_FORCE_MAX_NODES} nodes, lattice has {layout.V}"
            )
        self.layout = layout
        self.V = layout.V
        self.total = 1 << self.V
        self._rows = None
        self._lock = threading.Lock()

    def _chunks(self):
        step = 1 << CHUNK_BITS
        for start in range(0, self.total, step):
            stop = min(start + step, self.total)
            yield start, state_bits(start, stop, self.V)

    def _compress(self):
        index: dict[bytes, int] = {}
        rows, counts = [], []
        state_row = np.empty(self.total, dtype=np.int64) if self.V <= 22 else None
        for start, bits in self._chunks():
            feats = self.layout.features(bits)
            uniq, inv, cnt = np.unique(feats, axis=0, return_inverse=True, return_counts=True)
            local = np.empty(len(uniq), dtype=np.int64)
            for li, (row, c) in enumerate(zip(uniq, cnt)):
                key = row.tobytes()
                gi = index.get(key)
                if gi is None:
                    gi = index[key] = len(rows)
                    rows.append(row)
                    counts.append(0)
                counts[gi] += int(c)
                local[li] = gi
            if state_row is not None:
                state_row[start:start + len(bits)] = local[inv.ravel()]
        R = np.array(rows)
        counts = np.array(counts, dtype=np.int64)
        order = None
        if state_row is not None:
            order = np.argsort(state_row, kind="stable")
        return R, counts, state_row, order

    @property
    def rows(self):
        with self._lock:
            if self._rows is None:
                self._rows = self._compress()
        return self._rows

    def log_z(self, phi, h: Optional[np.ndarray] = None) -> float:
        phi = np.asarray(phi, dtype=float)
        if h is None:
            R, counts, _, _ = self.rows
            return float(logsumexp(R @ phi, b=counts))
        parts = []
        for _, bits in self._chunks():
            parts.append(logsumexp(self.layout.features(bits) @ phi + bits @ h))
        return float(logsumexp(parts))

    def log_probs(self, phi, h: Optional[np.ndarray] = None) -> np.ndarray:
        """Normalised log-probability of every state (index = bit pattern)."""
        if self.V > 22:
            raise CapExceededError("full probability vectors are limited to 22 nodes")
        phi = np.asarray(phi, dtype=float)
        if h is None:
            R, counts, state_row, _ = self.rows
            row_u = R @ phi
            return row_u[state_row] - logsumexp(row_u, b=counts)
        u = np.concatenate([self.layout.features(b) @ phi + b @ h for _, b in self._chunks()])
        return u - logsumexp(u)

    def sample_index(self, phi, rng: np.random.Generator, h=None) -> int:
        """One exact draw from p(x | phi), returned as a state index."""
        if h is not None:
            lp = self.log_probs(phi, h)
            return int(rng.choice(self.total, p=np.exp(lp - logsumexp(lp))))
        R, counts, state_row, order = self.rows
        if state_row is None:
            raise CapExceededError("exact sampling is limited to 22 nodes")
        w = R @ np.asarray(phi, dtype=float) + np.log(counts)
        p = np.exp(w - logsumexp(w))
        row = int(rng.choice(len(R), p=p / p.sum()))
        start = int(counts[:row].sum())
        return int(order[start + rng.integers(counts[row])])

    def image(self, index: int, spec: LatticeSpec) -> BinaryImage:
        bits = state_bits(index, index + 1, self.V)[0]
        data = np.zeros((spec.n, spec.m), dtype=np.uint8)
        data[spec.mask_array] = bits
        return BinaryImage(data, spec)


@lru_cache(maxsize=16)
def get_enumeration(spec: LatticeSpec, catalog: ConfigCatalog) -> Enumeration:
    return Enumeration(get_layout(spec, catalog))


def log_z_brute(z: PartitionState, spec: LatticeSpec, cov: Optional[CovariateField] = None) -> float:
    enum = get_enumeration(spec, z.catalog)
    return enum.log_z(z.phi, covariate_field(cov, z, spec))


# -- transfer matrix -----------------------------------------------------------

def _transfer_orientation(spec: LatticeSpec, catalog: ConfigCatalog, cap: int):
    tpl = catalog.template
    options = []
    # (column height, column count, node offsets as (row, col) in the scan orientation)
    if tpl.l <= 2:
        options.append((spec.n, spec.m, [(di, dj) for di, dj in tpl.shape]))
    if tpl.k <= 2:
        options.append((spec.m, spec.n, [(dj, di) for di, dj in tpl.shape]))
    if not options:
        raise CapExceededError("transfer matrix needs a template of width or height at most 2")
    height, width, offsets = min(options, key=lambda o: o[0])
    if height > cap:
        raise CapExceededError(f"transfer matrix column height {height} exceeds cap {cap}")
    return height, width, offsets


def _column_weights(table: np.ndarray, height: int, offsets) -> np.ndarray:
    states = np.arange(1 << height, dtype=np.int64)
    left = states[:, None]
    right = states[None, :]
    W = np.zeros((1 << height, 1 << height))
    for t in range(height):
        code = np.zeros_like(W, dtype=np.int64)
        for b, (dr, dc) in enumerate(offsets):
            col = left if dc == 0 else right
            code = code | (((col >> ((t + dr) % height)) & 1) << b)
        W += table[code]
    return W


def _log_trace_power(W: np.ndarray, power: int) -> float:
    shift = W.max()
    base = np.exp(W - shift)
    base_log = 0.0
    acc, acc_log = None, 0.0
    p = power
    while p:
        if p & 1:
            if acc is None:
                acc, acc_log = base.copy(), base_log
            else:
                acc = acc @ base
                acc_log += base_log
                s = acc.max()
                acc /= s
                acc_log += np.log(s)
        p >>= 1
        if p:
            base = base @ base
            base_log *= 2
            s = base.max()
            base /= s
            base_log += np.log(s)
    return float(power * shift + acc_log + np.log(np.trace(acc)))


def log_z_transfer(z: PartitionState, spec: LatticeSpec, cov: Optional[CovariateField] = None,
                   cap: int = TRANSFER_MAX_HEIGHT) -> float:
    if not spec.is_torus:
        raise ValidationError("the transfer matrix engine needs a torus lattice")
    if cov is not None or z.theta:
        raise ValidationError("the transfer matrix engine does not support covariates")
    height, width, offsets = _transfer_orientation(spec, z.catalog, cap)
    table = z.phi[z.catalog.code_to_class]
    W = _column_weights(table, height, offsets)
    return _log_trace_power(W, width)


# -- simulation ----------------------------------------------------------------

def gibbs_sample(z: PartitionState, spec: LatticeSpec, cov: Optional[CovariateField] = None,
                 sweeps: int = 1, rng: Optional[np.random.Generator] = None,
                 init: Optional[BinaryImage] = None) -> BinaryImage:
    """Systematic-scan single-site Gibbs sampler.

    Sites are visited colour class by colour class; sites of one class share
    no clique, so updating them together equals updating them one by one.
    Starts from a uniform random image unless ``init`` is given.
    """
    if sweeps < 1:
        raise ValidationError("sweeps must be at least 1")
    rng = rng if rng is not None else np.random.default_rng()
    layout = get_layout(spec, z.catalog)
    h = covariate_field(cov, z, spec)
    xv = _gibbs(layout, z.phi, h, sweeps, rng, None if init is None else init.flat)
    data = np.zeros((spec.n, spec.m), dtype=np.uint8)
    data[spec.mask_array] = xv
    return BinaryImage(data, spec)


def _gibbs(layout: CliqueLayout, phi, h, sweeps, rng, xv=None, size=None) -> np.ndarray:
    """Blocked systematic scan; ``size`` runs that many independent chains side by side."""
    table = layout.potential_table(phi)
    shape = (layout.V,) if size is None else (size, layout.V)
    if xv is None:
        xv = rng.integers(0, 2, shape).astype(np.int64)
    else:
        xv = np.asarray(xv, dtype=np.int64).copy()
    colors = layout.color_classes()
    for _ in range(sweeps):
        for sites in colors:
            logit = layout.conditional_logits(xv, table, h, sites=sites)
            xv[..., sites] = rng.random(logit.shape) < expit(logit)
    return xv


def gibbs_batch(z: PartitionState, spec: LatticeSpec, cov: Optional[CovariateField] = None,
                sweeps: int = 1, rng: Optional[np.random.Generator] = None, size: int = 1) -> np.ndarray:
    """``size`` independent Gibbs draws, returned as an array (size, n, m)."""
    if sweeps < 1 or size < 1:
        raise ValidationError("sweeps and size must be at least 1")
    rng = rng if rng is not None else np.random.default_rng()
    layout = get_layout(spec, z.catalog)
    xv = _gibbs(layout, z.phi, covariate_field(cov, z, spec), sweeps, rng, size=size)
    out = np.zeros((size, spec.n, spec.m), dtype=np.uint8)
    out[:, spec.mask_array] = xv
    return out


def pseudo_log_likelihood(x: BinaryImage, z: PartitionState, cov: Optional[CovariateField] = None) -> float:
    layout = get_layout(x.spec, z.catalog)
    xv = x.flat.astype(np.int64)
    logit = layout.conditional_logits(xv, layout.potential_table(z.phi), covariate_field(cov, z, x.spec))
    return float(np.sum(xv * logit - np.logaddexp(0.0, logit)))


# -- engines -------------------------------------------------------------------

class LikelihoodEngine:
    """Strategy producing log-likelihood ratios log p(x|z_new) - log p(x|z_old)."""

    name = "base"
    exact = False
    stochastic = False

    def __init__(self, spec: LatticeSpec, catalog: ConfigCatalog, cov: Optional[CovariateField] = None):
        self.spec = spec
        self.catalog = catalog
        self.cov = cov
        self.layout = get_layout(spec, catalog)

    def field(self, z: PartitionState):
        return covariate_field(self.cov, z, self.spec)

    def energy(self, x: BinaryImage, z: PartitionState) -> float:
        return self.layout.energy(x.flat, z.phi, self.field(z))

    def log_likelihood(self, x: BinaryImage, z: PartitionState) -> float:
        """Exact log-likelihood, or the engine's surrogate for it."""
        raise NotImplementedError

    def log_lik_ratio(self, x: BinaryImage, z_new: PartitionState, z_old: PartitionState,
                      rng: Optional[np.random.Generator] = None) -> float:
        if z_new == z_old:
            return 0.0
        return self.log_likelihood(x, z_new) - self.log_likelihood(x, z_old)

    def describe(self) -> dict:
        return {"engine": self.name}


class _ExactEngine(LikelihoodEngine):
    exact = True
    cache_size = 256

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._cache: OrderedDict = OrderedDict()
        self._lock = threading.Lock()

    def log_z(self, z: PartitionState) -> float:
        key = (z.groups, z.values, z.theta)
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key]
        value = self._compute_log_z(z)
        with self._lock:
            self._cache[key] = value
            if len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return value

    def _compute_log_z(self, z: PartitionState) -> float:
        raise NotImplementedError

    def log_likelihood(self, x: BinaryImage, z: PartitionState) -> float:
        return self.energy(x, z) - self.log_z(z)


class BruteForceEngine(_ExactEngine):
    name = "brute"

    def __init__(self, spec, catalog, cov=None):
        super().__init__(spec, catalog, cov)
        self.enumeration = get_enumeration(spec, catalog)

    def _compute_log_z(self, z):
        return self.enumeration.log_z(z.phi, self.field(z))


class TransferEngine(_ExactEngine):
    name = "transfer"

    def __init__(self, spec, catalog, cov=None, cap: int = TRANSFER_MAX_HEIGHT):
        if cov is not None:
            raise ValidationError("the transfer matrix engine does not support covariates")
        if not spec.is_torus:
            raise ValidationError("the transfer matrix engine needs a torus lattice")
        super().__init__(spec, catalog, cov)
        self.cap = cap
        _transfer_orientation(spec, catalog, cap)

    def _compute_log_z(self, z):
        return log_z_transfer(z, self.spec, None, self.cap)


class ExchangeEngine(LikelihoodEngine):
    """Approximate exchange ratio with a Gibbs-simulated auxiliary image."""

    name = "exchange"
    stochastic = True

    def __init__(self, spec, catalog, cov=None, sweeps: int = DEFAULT_EXCHANGE_SWEEPS):
        super().__init__(spec, catalog, cov)
        if sweeps < 1:
            raise ValidationError("exchange_sweeps must be at least 1")
        self.sweeps = sweeps

    def log_likelihood(self, x, z):
        # unnormalised; only used for reporting
        return self.energy(x, z)

    def auxiliary(self, z: PartitionState, rng: np.random.Generator) -> np.ndarray:
        return _gibbs(self.layout, z.phi, self.field(z), self.sweeps, rng)

    def log_lik_ratio(self, x, z_new, z_old, rng=None):
        if z_new == z_old:
            return 0.0
        if rng is None:
            raise ValidationError("the exchange engine needs a random generator")
        w = self.auxiliary(z_new, rng)
        lay = self.layout
        xv = x.flat
        h_new, h_old = self.field(z_new), self.field(z_old)
        return (lay.energy(xv, z_new.phi, h_new) - lay.energy(xv, z_old.phi, h_old)
                + lay.energy(w, z_old.phi, h_old) - lay.energy(w, z_new.phi, h_new))

    def describe(self):
        return {"engine": self.name, "exchange_sweeps": self.sweeps}


class PseudoLikelihoodEngine(LikelihoodEngine):
    name = "pseudo"

    def log_likelihood(self, x, z):
        return pseudo_log_likelihood(x, z, self.cov)


class PriorOnlyEngine(LikelihoodEngine):
    """Flat likelihood; turns the sampler into a prior simulator."""

    name = "none"

    def log_likelihood(self, x, z):
        return 0.0

    def log_lik_ratio(self, x, z_new, z_old, rng=None):
        return 0.0


ENGINES = {
    "brute": BruteForceEngine,
    "transfer": TransferEngine,
    "exchange": ExchangeEngine,
    "pseudo": PseudoLikelihoodEngine,
    "none": PriorOnlyEngine,
}


def make_engine(name: str, spec: LatticeSpec, catalog: ConfigCatalog,
                cov: Optional[CovariateField] = None, exchange_sweeps: int = DEFAULT_EXCHANGE_SWEEPS,
                transfer_cap: int = TRANSFER_MAX_HEIGHT) -> LikelihoodEngine:
    try:
        cls = ENGINES[name]
    except KeyError:
        raise ValidationError(f"unknown likelihood engine {name!r}; choose from {sorted(ENGINES)}") from None
    if cls is ExchangeEngine:
        return cls(spec, catalog, cov, sweeps=exchange_sweeps)
    if cls is TransferEngine:
        return cls(spec, catalog, cov, cap=transfer_cap)
    return cls(spec, catalog, cov)
