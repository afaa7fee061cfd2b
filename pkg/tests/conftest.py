"""Shared fixtures and independent oracles.

The oracles here deliberately avoid the package's vectorised machinery:
energies are summed clique by clique with explicit loops, and exact
distributions are built by enumerating every image.
"""

import itertools
import math

import numpy as np
import pytest

from binmrf.configsets import build_catalog, classify
from binmrf.lattice import LatticeSpec, TemplateClique


@pytest.fixture(scope="session")
def cat2x2():
    return build_catalog(TemplateClique.block(2, 2))


@pytest.fixture(scope="session")
def cat1x2():
    return build_catalog(TemplateClique.block(1, 2))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def all_images(n, m):
    """Every n x m binary image, in state-index order (node v <- bit v, row-major)."""
    idx = np.arange(1 << (n * m))[:, None]
    return ((idx >> np.arange(n * m)) & 1).reshape(-1, n, m)


def naive_energy(x, phi, cat, spec, h=None):
    """Clique-by-clique energy with explicit completion averaging at the border."""
    tpl = cat.template
    x = np.asarray(x)
    total = 0.0
    if spec.is_torus:
        anchors = [(t, u) for t in range(spec.n) for u in range(spec.m)]
    else:
        anchors = [(t, u) for t in range(-tpl.k, spec.n + 1) for u in range(-tpl.l, spec.m + 1)]
    for t, u in anchors:
        inside, outside, on = [], [], []
        for di, dj in tpl.shape:
            i, j = t + di, u + dj
            if spec.is_torus:
                i, j = i % spec.n, j % spec.m
            if spec.contains((i, j)):
                inside.append((di, dj))
                if x[i, j]:
                    on.append((di, dj))
            else:
                outside.append((di, dj))
        if not inside:
            continue
        vals = []
        for bits in itertools.product((0, 1), repeat=len(outside)):
            full = on + [p for p, b in zip(outside, bits) if b]
            vals.append(phi[classify(cat, full)])
        total += sum(vals) / len(vals)
    if h is not None:
        total += float(np.sum(x[spec.mask_array] * h))
    return total


def exact_distribution(phi, cat, spec):
    """Normalised probabilities of every image via the naive energy."""
    images = all_images(spec.n, spec.m)
    u = np.array([naive_energy(x, phi, cat, spec) for x in images])
    p = np.exp(u - u.max())
    return images, p / p.sum()


def ising_distribution(omega, n, m):
    """Nearest-neighbour Ising probabilities on an n x m torus, computed directly."""
    images = all_images(n, m)
    disagree = (images != np.roll(images, 1, axis=1)).sum(axis=(1, 2)) + (
        images != np.roll(images, 1, axis=2)).sum(axis=(1, 2))
    u = -omega * disagree
    p = np.exp(u - u.max())
    return p / p.sum()


def random_sum_zero(rng, size, scale=1.0):
    v = rng.normal(0.0, scale, size)
    return v - v.mean()


def log_sum_exp(values):
    top = max(values)
    return top + math.log(sum(math.exp(v - top) for v in values))
