"""Model state, images, covariates and energy evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Optional, Sequence

import numpy as np

from .configsets import ConfigCatalog
from .errors import ValidationError
from .lattice import LatticeSpec, anchor_range, check_fits

SUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class PartitionState:
    """Grouping of configuration classes with one shared potential per group.

    Groups are stored canonically (members sorted, groups ordered by their
    smallest member) so equal partitions compare and hash equal regardless of
    how they were built.
    """

    catalog: ConfigCatalog = field(compare=False, repr=False)
    groups: tuple[tuple[int, ...], ...]
    values: tuple[float, ...]
    theta: tuple[float, ...] = ()

    def __post_init__(self):
        groups = [tuple(sorted(int(c) for c in g)) for g in self.groups]
        values = [float(v) for v in self.values]
        if len(groups) != len(values):
            raise ValidationError("need exactly one value per group")
        if any(not g for g in groups):
            raise ValidationError("groups must be non-empty")
        order = sorted(range(len(groups)), key=lambda i: groups[i][0])
        groups = tuple(groups[i] for i in order)
        values = tuple(values[i] for i in order)
        members = sorted(c for g in groups for c in g)
        if members != list(range(self.catalog.class_count)):
            raise ValidationError("groups must partition the configuration classes")
        if abs(sum(values)) > SUM_TOLERANCE:
            raise ValidationError(f"group values must sum to zero, got {sum(values):.3e}")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))

    @classmethod
    def single_group(cls, catalog: ConfigCatalog, theta: Sequence[float] = ()) -> "PartitionState":
        return cls(catalog, (tuple(range(catalog.class_count)),), (0.0,), tuple(theta))

    @classmethod
    def from_phi(cls, catalog: ConfigCatalog, phi, theta: Sequence[float] = (),
                 centre: bool = False) -> "PartitionState":
        """Group classes sharing exactly equal potentials.

        With ``centre`` the distinct values are shifted to sum to zero, which
        leaves the distribution of x unchanged.
        """
        phi = np.asarray(phi, dtype=float)
        if centre:
            distinct = np.unique(phi)
            phi = phi - distinct.mean()
        buckets: dict[float, list[int]] = {}
        for cid, v in enumerate(phi):
            buckets.setdefault(float(v), []).append(cid)
        return cls(catalog, tuple(map(tuple, buckets.values())), tuple(buckets), tuple(theta))

    @property
    def r(self) -> int:
        return len(self.groups)

    @cached_property
    def class_to_group(self) -> np.ndarray:
        out = np.empty(self.catalog.class_count, dtype=np.int64)
        for gi, g in enumerate(self.groups):
            out[list(g)] = gi
        return out

    @cached_property
    def phi(self) -> np.ndarray:
        return np.asarray(self.values)[self.class_to_group]

    def with_values(self, values) -> "PartitionState":
        return PartitionState(self.catalog, self.groups, tuple(values), self.theta)

    def with_theta(self, theta) -> "PartitionState":
        return PartitionState(self.catalog, self.groups, self.values, tuple(theta))

    def to_dict(self) -> dict:
        return {
            "groups": [list(g) for g in self.groups],
            "values": list(self.values),
            "theta": list(self.theta),
        }

    @classmethod
    def from_dict(cls, catalog: ConfigCatalog, doc: dict) -> "PartitionState":
        try:
            return cls(catalog, tuple(map(tuple, doc["groups"])), tuple(doc["values"]), tuple(doc.get("theta", ())))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed partition state document: {exc}") from None


def phi_of(z: PartitionState) -> np.ndarray:
    return z.phi.copy()


@dataclass(frozen=True)
class BinaryImage:
    data: np.ndarray
    spec: LatticeSpec

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.shape != (self.spec.n, self.spec.m):
            raise ValidationError(f"image shape {data.shape} does not match lattice {self.spec.n}x{self.spec.m}")
        if not np.isin(data, (0, 1)).all():
            raise ValidationError("image values must be 0 or 1")
        data = data.astype(np.uint8)
        if self.spec.mask is not None:
            data = np.where(self.spec.mask_array, data, 0).astype(np.uint8)
        object.__setattr__(self, "data", data)

    @classmethod
    def torus(cls, data) -> "BinaryImage":
        data = np.asarray(data)
        return cls(data, LatticeSpec(data.shape[0], data.shape[1]))

    @property
    def flat(self) -> np.ndarray:
        """Values of the active (in-mask) nodes in row-major order."""
        return self.data[self.spec.mask_array]

    def from_flat(self, values) -> "BinaryImage":
        data = np.zeros_like(self.data)
        data[self.spec.mask_array] = values
        return BinaryImage(data, self.spec)


@dataclass(frozen=True)
class CovariateField:
    """Per-node covariates ``y[i, j, k]``; coefficients live on the partition state."""

    y: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 3:
            raise ValidationError("covariates must have shape (n, m, K)")
        object.__setattr__(self, "y", y)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"y{k + 1}" for k in range(y.shape[2])))

    @property
    def K(self) -> int:
        return self.y.shape[2]

    def field(self, theta, spec: LatticeSpec) -> np.ndarray:
        """Linear covariate term per active node."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.K,):
            raise ValidationError(f"expected {self.K} covariate coefficients, got {theta.shape}")
        if self.y.shape[:2] != (spec.n, spec.m):
            raise ValidationError("covariate grid does not match lattice")
        return (self.y @ theta)[spec.mask_array]


class CliqueLayout:
    """Precomputed clique geometry for one lattice and catalog.

    Every anchor of a template translate touching the lattice gets a row in
    ``anchor_nodes`` (node index per template node, ``V`` for nodes outside
    the lattice or mask). ``weights[mask_id, code]`` is the vector of class
    weights for a clique whose inside part shows bit pattern ``code``: a
    one-hot class indicator for full cliques, the uniform average over the
    outside completions for border cliques. Energy is then linear in phi.
    """

    def __init__(self, spec: LatticeSpec, catalog: ConfigCatalog):
        tpl = catalog.template
        check_fits(spec, tpl)
        self.spec = spec
        self.catalog = catalog
        self.T = tpl.size
        mask = spec.mask_array
        node_index = np.full((spec.n, spec.m), -1, dtype=np.int64)
        node_index[mask] = np.arange(mask.sum())
        self.V = int(mask.sum())
        self.node_index = node_index
        self.coords = np.argwhere(mask)

        rows = []
        for t, u in anchor_range(spec, tpl):
            idx = []
            for di, dj in tpl.shape:
                i, j = t + di, u + dj
                if spec.is_torus:
                    i, j = i % spec.n, j % spec.m
                inside = 0 <= i < spec.n and 0 <= j < spec.m and mask[i, j]
                idx.append(node_index[i, j] if inside else self.V)
            if any(v < self.V for v in idx):
                rows.append(idx)
        self.anchor_nodes = np.array(rows, dtype=np.int64)
        self.A = len(rows)
        bits = 1 << np.arange(self.T)
        inside_codes = ((self.anchor_nodes < self.V) * bits).sum(axis=1)
        masks, self.mask_id = np.unique(inside_codes, return_inverse=True)
        self.masks = masks
        full = (1 << self.T) - 1
        self.n_full = int((inside_codes == full).sum())

        K = catalog.class_count
        ncode = 1 << self.T
        weights = np.zeros((len(masks), ncode, K))
        c2c = catalog.code_to_class
        for mi, mk in enumerate(masks):
            outside = full & ~int(mk)
            out_bits = [b for b in range(self.T) if outside >> b & 1]
            completions = [sum(1 << b for b, on in zip(out_bits, combo) if on)
                           for combo in np.ndindex(*(2,) * len(out_bits))] if out_bits else [0]
            for code in range(ncode):
                if code & ~int(mk):
                    continue
                for extra in completions:
                    weights[mi, code, c2c[code | extra]] += 1.0 / len(completions)
        self.weights = weights
        self._key_weights = weights.reshape(-1, K)

        site_anchor = np.full((self.V, self.T), -1, dtype=np.int64)
        for a, idx in enumerate(self.anchor_nodes):
            for b, v in enumerate(idx):
                if v < self.V:
                    site_anchor[v, b] = a
        self.site_anchor = site_anchor
        self._bits = bits

    # -- codes ---------------------------------------------------------------
    def codes(self, xv: np.ndarray) -> np.ndarray:
        """Bit code of every anchor for one (V,) or a batch (S, V) of states."""
        xv = np.asarray(xv, dtype=np.int64)
        pad = np.zeros(xv.shape[:-1] + (1,), dtype=np.int64)
        xs = np.concatenate([xv, pad], axis=-1)
        return (xs[..., self.anchor_nodes] * self._bits).sum(axis=-1)

    def keys(self, codes: np.ndarray) -> np.ndarray:
        return self.mask_id * (1 << self.T) + codes

    def features(self, xv: np.ndarray) -> np.ndarray:
        """Class weight vector F(x) with U(x) = F(x) . phi (covariates excluded)."""
        xv = np.asarray(xv)
        keys = self.keys(self.codes(xv))
        nkeys = self._key_weights.shape[0]
        if keys.ndim == 1:
            return np.bincount(keys, minlength=nkeys) @ self._key_weights
        offs = np.arange(keys.shape[0])[:, None] * nkeys
        counts = np.bincount((keys + offs).ravel(), minlength=nkeys * keys.shape[0])
        return counts.reshape(keys.shape[0], nkeys) @ self._key_weights

    def potential_table(self, phi) -> np.ndarray:
        return self.weights @ np.asarray(phi, dtype=float)

    # -- energies ------------------------------------------------------------
    def energy(self, xv, phi, h: Optional[np.ndarray] = None) -> float:
        table = self.potential_table(phi)
        u = float(table[self.mask_id, self.codes(xv)].sum())
        if h is not None:
            u += float(np.dot(xv, h))
        return u

    def conditional_logits(self, xv, table, h=None, codes=None, sites=None) -> np.ndarray:
        """U(x with site on) - U(x with site off) for every site (or a subset).

        ``xv`` may be one state (V,) or a batch (B, V).
        """
        codes = self.codes(xv) if codes is None else codes
        sa = self.site_anchor if sites is None else self.site_anchor[sites]
        out = np.zeros(codes.shape[:-1] + (sa.shape[0],))
        for b in range(self.T):
            a = sa[:, b]
            c = codes[..., a]
            mid = self.mask_id[a]
            out += table[mid, c | (1 << b)] - table[mid, c & ~(1 << b)]
        if h is not None:
            out += h if sites is None else h[sites]
        return out

    def delta_flip(self, xv, phi, site: int, h=None) -> float:
        """U(x with ``site`` flipped) - U(x), touching only cliques containing the site."""
        xv = np.asarray(xv)
        table = self.potential_table(phi)
        anchors = self.site_anchor[site]
        sub = self.anchor_nodes[anchors]
        pad = np.append(xv.astype(np.int64), 0)
        codes = (pad[sub] * self._bits).sum(axis=1)
        logit = 0.0
        for b, a in enumerate(anchors):
            if a < 0:
                continue
            c = codes[b]
            mid = self.mask_id[a]
            logit += table[mid, c | (1 << b)] - table[mid, c & ~(1 << b)]
        if h is not None:
            logit += h[site]
        return logit if xv[site] == 0 else -logit

    def color_classes(self) -> list[np.ndarray]:
        """Site sets whose members share no clique, for blocked systematic scans."""
        return _color_classes(self)


def _cyclic_colors(size: int, width: int, wrap: bool) -> np.ndarray:
    if width <= 1:
        return np.zeros(size, dtype=np.int64)
    if not wrap:
        return np.arange(size) % width
    full = (size // width) * width
    colors = np.arange(size) % width
    colors[full:] = width + np.arange(size - full)
    return colors


def _color_classes(layout: CliqueLayout) -> list[np.ndarray]:
    tpl = layout.catalog.template
    spec = layout.spec
    rc = _cyclic_colors(spec.n, tpl.k, spec.is_torus)
    cc = _cyclic_colors(spec.m, tpl.l, spec.is_torus)
    ncol = cc.max() + 1
    color = rc[layout.coords[:, 0]] * ncol + cc[layout.coords[:, 1]]
    return [np.flatnonzero(color == c) for c in np.unique(color)]


@lru_cache(maxsize=32)
def get_layout(spec: LatticeSpec, catalog: ConfigCatalog) -> CliqueLayout:
    return CliqueLayout(spec, catalog)


def covariate_field(cov: Optional[CovariateField], z: PartitionState, spec: LatticeSpec):
    if cov is None:
        if z.theta:
            raise ValidationError("state has covariate coefficients but no covariates were given")
        return None
    return cov.field(z.theta, spec)


def energy(x: BinaryImage, z: PartitionState, cov: Optional[CovariateField] = None) -> float:
    layout = get_layout(x.spec, z.catalog)
    return layout.energy(x.flat, z.phi, covariate_field(cov, z, x.spec))


def energy_delta_flip(x: BinaryImage, z: PartitionState, cov: Optional[CovariateField], site) -> float:
    layout = get_layout(x.spec, z.catalog)
    i, j = site
    v = layout.node_index[i, j]
    if v < 0:
        raise ValidationError(f"site {site} is not an active lattice node")
    return layout.delta_flip(x.flat, z.phi, int(v), covariate_field(cov, z, x.spec))
