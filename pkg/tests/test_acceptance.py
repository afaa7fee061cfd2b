"""Acceptance criteria; each test prints one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are also repeated in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from binmrf.configsets import build_catalog
from binmrf.geweke import batch_means_se, compare, prior_draws, successive_conditional
from binmrf.io import state_line
from binmrf.lattice import LatticeSpec, TemplateClique
from binmrf.likelihood import BruteForceEngine, ExchangeEngine, get_enumeration, gibbs_sample, log_z_brute, log_z_transfer
from binmrf.model import BinaryImage, PartitionState
from binmrf.param import (
    beta_to_phi,
    build_conversion_table,
    energy_beta,
    independence_phi,
    ising_phi,
    phi_to_beta,
)
from binmrf.prior import PriorConfig, log_prior_partition, prior_r_probabilities
from binmrf.sampler import SamplerConfig, propose_split_merge, run_chain, run_chain_tree
from binmrf.stats import beta_posterior, partition_frequencies, r_histogram

from conftest import all_images, ising_distribution, naive_energy

RESULTS = []

GEWEKE_PRIOR = PriorConfig(3, gamma=0.5, sigma_phi=1.0)
GEWEKE_DRAWS = 20000


def report(number, ok, detail, elapsed, limit):
    ok = bool(ok) and elapsed < limit
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail} ({elapsed:.1f} s, limit {limit:.0f} s)"
    RESULTS.append(line)
    print(line)
    assert ok, line


def restricted_growth(n):
    """All set partitions of range(n) as label arrays."""
    labels = [0] * n

    def rec(i, top):
        if i == n:
            yield labels
            return
        for v in range(top + 2):
            labels[i] = v
            yield from rec(i + 1, max(top, v))

    yield from rec(1, 0)


def groups_of(labels):
    out = {}
    for c, g in enumerate(labels):
        out.setdefault(g, []).append(c)
    return list(out.values())


def geweke(cfg):
    cat = build_catalog(TemplateClique.block(1, 2))
    spec = LatticeSpec(4, 4)
    chain = successive_conditional(spec, cat, GEWEKE_PRIOR, cfg, GEWEKE_DRAWS)
    direct = prior_draws(cat, GEWEKE_PRIOR, GEWEKE_DRAWS, seed=11)
    return compare(chain, direct)


def test_criterion_01_class_counts():
    t0 = time.perf_counter()
    expected = {(1, 2): 3, (2, 2): 11, (2, 3): 45, (3, 3): 401}
    got = {kl: build_catalog(TemplateClique.block(*kl)).class_count for kl in expected}
    free = {kl: build_catalog(TemplateClique.block(*kl)).free_parameters for kl in expected}
    ok = got == expected and all(free[kl] == expected[kl] - 1 for kl in expected)
    report(1, ok, f"class counts {list(got.values())}, free parameters {list(free.values())}",
           time.perf_counter() - t0, 1)


def test_criterion_02_roundtrip():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for shape in ((1, 2), (2, 2)):
        cat = build_catalog(TemplateClique.block(*shape))
        for n in (4, 8):
            table = build_conversion_table(LatticeSpec(n, n), cat)
            for _ in range(200):
                phi = rng.normal(size=cat.class_count)
                worst = max(worst, np.abs(beta_to_phi(phi_to_beta(phi, table), table) - phi).max())
                beta = rng.normal(size=cat.class_count)
                worst = max(worst, np.abs(phi_to_beta(beta_to_phi(beta, table), table) - beta).max())
    report(2, worst <= 1e-10, f"max roundtrip error {worst:.2e}", time.perf_counter() - t0, 5)


def test_criterion_03_energy_forms():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    cat = build_catalog(TemplateClique.block(2, 2))
    spec = LatticeSpec(4, 5)
    table = build_conversion_table(spec, cat)
    worst = 0.0
    for _ in range(100):
        phi = rng.normal(size=cat.class_count)
        x = rng.integers(0, 2, (4, 5))
        worst = max(worst, abs(energy_beta(x, phi_to_beta(phi, table), cat) - naive_energy(x, phi, cat, spec)))
    report(3, worst <= 1e-9, f"max energy difference {worst:.2e}", time.perf_counter() - t0, 5)


def test_criterion_04_ising_embedding():
    t0 = time.perf_counter()
    cat = build_catalog(TemplateClique.block(2, 2))
    spec = LatticeSpec(3, 4)
    p = np.exp(get_enumeration(spec, cat).log_probs(ising_phi(0.4, cat)))
    tv = 0.5 * np.abs(p - ising_distribution(0.4, 3, 4)).sum()
    report(4, tv <= 1e-12 and p.size == 4096, f"total variation {tv:.2e} over {p.size} states",
           time.perf_counter() - t0, 10)


def test_criterion_05_independence_embedding():
    t0 = time.perf_counter()
    cat = build_catalog(TemplateClique.block(2, 2))
    p = np.exp(get_enumeration(LatticeSpec(3, 3), cat).log_probs(independence_phi(0.3, cat)))
    images = all_images(3, 3).reshape(-1, 9)
    marg = p @ images
    product = np.prod(np.where(images == 1, marg, 1.0 - marg), axis=1)
    dev = max(np.abs(marg - 0.3).max(), np.abs(p - product).max())
    report(5, dev <= 1e-12, f"max deviation {dev:.2e}", time.perf_counter() - t0, 5)


def test_criterion_06_transfer_matrix():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    cat = build_catalog(TemplateClique.block(2, 2))
    worst = 0.0
    for n, m in ((4, 4), (4, 5)):
        spec = LatticeSpec(n, m)
        for _ in range(10):
            v = rng.normal(size=cat.class_count)
            z = PartitionState.from_phi(cat, v - v.mean())
            worst = max(worst, abs(log_z_transfer(z, spec) - log_z_brute(z, spec)))
    report(6, worst <= 1e-10, f"max log normaliser difference {worst:.2e}", time.perf_counter() - t0, 30)


def test_criterion_07_prior_exactness():
    t0 = time.perf_counter()
    partitions = [groups_of(lab) for lab in restricted_growth(11)]
    totals = []
    for gamma in (0.0, 0.5, 1.0):
        cfg = PriorConfig(11, gamma=gamma)
        totals.append(math.fsum(math.exp(log_prior_partition(g, cfg)) for g in partitions))
    p5 = prior_r_probabilities(PriorConfig(11, gamma=0.0))[4]
    flat = np.abs(prior_r_probabilities(PriorConfig(11, gamma=1.0)) - 1 / 11).max()
    ok = (len(partitions) == 678570 and all(abs(t - 1) <= 1e-9 for t in totals)
          and abs(p5 - 0.36) <= 0.005 and flat <= 1e-12)
    report(7, ok, f"{len(partitions)} partitions, sums {[f'{t:.12f}' for t in totals]}, "
                  f"p(r=5)={p5:.4f}, uniform deviation {flat:.1e}", time.perf_counter() - t0, 120)


def test_criterion_08_jacobians():
    t0 = time.perf_counter()
    cat = build_catalog(TemplateClique.block(2, 2))
    ok, seen = True, []
    for r in range(2, 7):
        # r - 1 singletons and one large group, so both directions are available
        groups = [(c,) for c in range(r - 1)] + [tuple(range(r - 1, 11))]
        v = np.linspace(-1, 1, r)
        z = PartitionState(cat, groups, v - v.mean())
        kinds = {}
        for seed in range(200):
            p = propose_split_merge(z, np.random.default_rng(seed), 0.5)
            kinds.setdefault(p.kind, p.log_jacobian)
            if len(kinds) == 2:
                break
        ok &= kinds.get("split") == math.log(r / (r + 1)) and kinds.get("merge") == math.log(r / (r - 1))
        seen.append(r)
    report(8, ok, f"split/merge Jacobians exact for r in {seen}", time.perf_counter() - t0, 1)


@pytest.mark.slow
def test_criterion_09_geweke():
    t0 = time.perf_counter()
    res = geweke(SamplerConfig(sigma=1.0, seed=3))
    ok = all(r.passed(0.01) for r in res)
    detail = ", ".join(f"{r.statistic} p={r.p_value:.3f}" for r in res)
    report(9, ok, f"Geweke {GEWEKE_DRAWS} draws: {detail}", time.perf_counter() - t0, 600)


@pytest.mark.slow
def test_criterion_10_exchange_vs_exact():
    t0 = time.perf_counter()
    cat = build_catalog(TemplateClique.block(2, 2))
    spec = LatticeSpec(4, 4)
    grid = [PartitionState.from_phi(cat, ising_phi(w, cat), centre=True) for w in (0.1, 0.2, 0.3, 0.4, 0.5)]
    x = gibbs_sample(grid[2], spec, sweeps=200, rng=np.random.default_rng(10))
    logl = np.array([BruteForceEngine(spec, cat).log_likelihood(x, z) for z in grid])
    exact = np.exp(logl - logl.max())
    exact /= exact.sum()
    engine = ExchangeEngine(spec, cat)
    rng = np.random.default_rng(100)
    iters = 20000
    k, path = 2, np.empty(iters, dtype=int)
    for t in range(iters):
        j = k + (1 if rng.random() < 0.5 else -1)
        if 0 <= j < len(grid):
            llr = engine.log_lik_ratio(x, grid[j], grid[k], rng)
            if math.log(rng.random()) < llr:
                k = j
        path[t] = k
    occ = np.bincount(path, minlength=5) / iters
    se = np.array([batch_means_se((path == i).astype(float)) for i in range(5)])
    zs = np.abs(occ - exact) / np.maximum(se, 1e-12)
    detail = ", ".join(f"{o:.3f}/{e:.3f}" for o, e in zip(occ, exact))
    report(10, bool((zs <= 3).all()), f"occupancy exchange/exact {detail}; max |z| {zs.max():.2f}",
           time.perf_counter() - t0, 600)


@pytest.mark.slow
def test_criterion_11_ising_rerun():
    t0 = time.perf_counter()
    cat = build_catalog(TemplateClique.block(2, 2))
    spec = LatticeSpec(48, 48)
    truth = PartitionState.from_phi(cat, ising_phi(0.4, cat), centre=True)
    x = gibbs_sample(truth, spec, sweeps=500, rng=np.random.default_rng(1))
    engine = ExchangeEngine(spec, cat)
    prior = PriorConfig(cat.class_count, gamma=0.5)
    cfg = SamplerConfig(iterations=3000, seed=2)
    states = [rec.state for rec in run_chain(x, cfg, engine, prior) if rec.iteration > 500]
    hist = r_histogram(states)
    top, p_top = partition_frequencies(states)[0]
    expected = ((0, 10), (1, 2, 3, 6, 7, 8, 9), (4, 5))
    summ = beta_posterior(states, spec)
    inside = [bool(summ.lower[c] <= 0.8 <= summ.upper[c]) for c in (2, 3)]
    ok = int(np.argmax(hist)) + 1 == 3 and top == expected and p_top > 0.5 and all(inside)
    intervals = ", ".join(f"[{summ.lower[c]:.3f}, {summ.upper[c]:.3f}]" for c in (2, 3))
    report(11, ok, f"p(r=3)={hist[2]:.3f}, expected grouping on top: {top == expected} with p={p_top:.3f}, "
                   f"pair beta 95% intervals {intervals}", time.perf_counter() - t0, 3600)


@pytest.mark.slow
def test_criterion_12_proposal_tree():
    t0 = time.perf_counter()
    cat = build_catalog(TemplateClique.block(2, 2))
    spec = LatticeSpec(4, 4)
    engine = BruteForceEngine(spec, cat)
    prior = PriorConfig(cat.class_count, gamma=0.5, sigma_phi=1.0)
    x = BinaryImage(np.random.default_rng(12).integers(0, 2, (4, 4)), spec)
    cfg = SamplerConfig(iterations=300, sigma=0.8, seed=12)
    seq = "".join(state_line(r.iteration, r.state) + "\n" for r in run_chain(x, cfg, engine, prior))
    tree = "".join(state_line(r.iteration, r.state) + "\n" for r in run_chain_tree(x, cfg, engine, prior))
    identical = seq.encode() == tree.encode()
    res = geweke(SamplerConfig(sigma=1.0, seed=3, tree_depth=3))
    ok = identical and all(r.passed(0.01) for r in res)
    detail = ", ".join(f"{r.statistic} p={r.p_value:.3f}" for r in res)
    report(12, ok, f"d=1 byte-identical: {identical}; d=3 Geweke {detail}", time.perf_counter() - t0, 900)


@pytest.fixture(scope="session", autouse=True)
def _summary(request):
    yield
    if RESULTS:
        reporter = request.config.pluginmanager.get_plugin("terminalreporter")
        if reporter is not None:
            reporter.write_sep("=", "acceptance criteria")
            for line in sorted(RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
                reporter.write_line(line)
