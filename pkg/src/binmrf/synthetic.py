"""Synthetic stand-in for an irregular presence/absence survey with covariates.

Produces a free-boundary lattice with an irregular region mask, four
standardised covariates (two smooth terrain-like fields plus the north and
east coordinates) and an image simulated from a 2x2-clique model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .configsets import build_catalog
from .lattice import LatticeSpec, TemplateClique
from .likelihood import gibbs_sample
from .model import BinaryImage, CovariateField, PartitionState

COVARIATE_NAMES = ("altitude", "mires", "north", "east")
TRUE_THETA = (-0.8, -0.4, 0.3, 0.0)


@dataclass(frozen=True)
class SyntheticSurvey:
    image: BinaryImage
    covariates: CovariateField
    truth: PartitionState


def _smooth_field(rng, n, m, width):
    f = gaussian_filter(rng.normal(size=(n, m)), width, mode="nearest")
    return f


def _standardise(f, mask):
    v = f[mask]
    return (f - v.mean()) / v.std()


def region_mask(rng: np.random.Generator, n: int, m: int) -> np.ndarray:
    """Irregular blob: a jittered ellipse."""
    i, j = np.mgrid[0:n, 0:m]
    r = ((i - (n - 1) / 2) / (0.5 * n)) ** 2 + ((j - (m - 1) / 2) / (0.5 * m)) ** 2
    wobble = 0.35 * _standardise(_smooth_field(rng, n, m, max(n, m) / 8), np.ones((n, m), bool))
    return r + 0.25 * wobble < 0.9


def true_state() -> PartitionState:
    """Empty and full cliques favoured over mixed ones (clustered presence)."""
    cat = build_catalog(TemplateClique.block(2, 2))
    full = cat.class_count - 1
    mixed = tuple(range(1, full))
    return PartitionState(cat, ((0,), mixed, (full,)), (0.4, -0.8, 0.4), TRUE_THETA)


def red_deer_like(n: int = 30, m: int = 40, seed: int = 0, sweeps: int = 200) -> SyntheticSurvey:
    rng = np.random.default_rng(seed)
    mask = region_mask(rng, n, m)
    spec = LatticeSpec.with_mask(mask)
    i, j = np.mgrid[0:n, 0:m]
    fields = [
        _smooth_field(rng, n, m, 4.0),
        _smooth_field(rng, n, m, 2.0),
        -i.astype(float),
        j.astype(float),
    ]
    y = np.stack([_standardise(f, mask) * mask for f in fields], axis=-1)
    cov = CovariateField(y, COVARIATE_NAMES)
    z = true_state()
    x = gibbs_sample(z, spec, cov, sweeps=sweeps, rng=rng)
    return SyntheticSurvey(x, cov, z)
