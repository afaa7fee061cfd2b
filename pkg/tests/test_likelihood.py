import math

import numpy as np
import pytest
from scipy import stats as sps

from binmrf.configsets import build_catalog, classify
from binmrf.errors import CapExceededError, ValidationError
from binmrf.lattice import LatticeSpec, TemplateClique
from binmrf.likelihood import (
    BruteForceEngine,
    ExchangeEngine,
    PseudoLikelihoodEngine,
    TransferEngine,
    get_enumeration,
    gibbs_batch,
    gibbs_sample,
    log_z_brute,
    log_z_transfer,
    make_engine,
    pseudo_log_likelihood,
)
from binmrf.model import BinaryImage, CovariateField, PartitionState, get_layout
from binmrf.param import independence_phi, ising_phi

from conftest import all_images, exact_distribution, log_sum_exp, naive_energy, random_sum_zero


def state(cat, phi):
    return PartitionState.from_phi(cat, phi, centre=True)


def three_groups(cat, rng):
    K = cat.class_count
    labels = np.concatenate([[0, 1, 2], rng.integers(0, 3, K - 3)])
    rng.shuffle(labels)
    groups = [tuple(np.flatnonzero(labels == g)) for g in range(3)]
    return PartitionState(cat, groups, random_sum_zero(rng, 3))


class TestBruteForce:
    def test_uniform(self, cat2x2):
        assert log_z_brute(PartitionState.single_group(cat2x2), LatticeSpec(3, 3)) == pytest.approx(9 * math.log(2))

    def test_matches_naive_enumeration(self, cat2x2, rng):
        for spec in (LatticeSpec(3, 3), LatticeSpec(3, 4, "free")):
            z = three_groups(cat2x2, rng)
            oracle = log_sum_exp([naive_energy(x, z.phi, cat2x2, spec) for x in all_images(spec.n, spec.m)])
            assert log_z_brute(z, spec) == pytest.approx(oracle, abs=1e-10)

    def test_covariates(self, cat1x2, rng):
        spec = LatticeSpec(3, 3)
        y = rng.normal(size=(3, 3, 2))
        z = three_groups(cat1x2, rng).with_theta((0.7, -0.2))
        h = (y @ np.array([0.7, -0.2])).ravel()
        oracle = log_sum_exp([naive_energy(x, z.phi, cat1x2, spec) + x.ravel() @ h for x in all_images(3, 3)])
        assert log_z_brute(z, spec, CovariateField(y)) == pytest.approx(oracle, abs=1e-10)

    def test_independence_factorises(self, cat2x2):
        z = state(cat2x2, independence_phi(0.3, cat2x2))
        lp = get_enumeration(LatticeSpec(3, 3), cat2x2).log_probs(z.phi)
        ones = all_images(3, 3).reshape(512, -1).sum(axis=1)
        np.testing.assert_allclose(np.exp(lp), 0.3 ** ones * 0.7 ** (9 - ones), atol=1e-12)

    def test_cap(self, cat2x2):
        with pytest.raises(CapExceededError):
            log_z_brute(PartitionState.single_group(cat2x2), LatticeSpec(6, 5))

    def test_exact_sampler(self, cat1x2, rng):
        spec = LatticeSpec(2, 3)
        z = three_groups(cat1x2, rng)
        enum = get_enumeration(spec, cat1x2)
        p = np.exp(enum.log_probs(z.phi))
        draws = [enum.sample_index(z.phi, rng) for _ in range(20000)]
        counts = np.bincount(draws, minlength=64)
        assert sps.chisquare(counts, 20000 * p).pvalue > 0.001
        assert enum.image(5, spec).data.ravel().tolist() == [1, 0, 1, 0, 0, 0]


class TestTransfer:
    def test_uniform(self, cat2x2):
        assert log_z_transfer(PartitionState.single_group(cat2x2), LatticeSpec(5, 7)) == pytest.approx(35 * math.log(2))

    @pytest.mark.parametrize("n,m", [(3, 4), (4, 4), (2, 5)])
    def test_matches_brute_force(self, n, m, cat2x2, cat1x2, rng):
        for cat in (cat2x2, cat1x2):
            spec = LatticeSpec(n, m)
            for z in (state(cat2x2, ising_phi(0.4, cat2x2)) if cat is cat2x2 else None, three_groups(cat, rng)):
                if z is None:
                    continue
                assert log_z_transfer(z, spec) == pytest.approx(log_z_brute(z, spec), abs=1e-10)

    def test_orientation_symmetry(self, rng):
        cat = build_catalog(TemplateClique.block(2, 2))
        z = three_groups(cat, rng)
        value = log_z_transfer(z, LatticeSpec(4, 12))
        assert np.isfinite(value)
        # the transposed template on the transposed lattice has the same partition function
        phi_t = np.empty_like(z.phi)
        for c in cat.classes:
            phi_t[classify(cat, [(j, i) for i, j in c.canonical])] = z.phi[c.id]
        zt = PartitionState.from_phi(cat, phi_t)
        assert value == pytest.approx(log_z_transfer(zt, LatticeSpec(12, 4)), abs=1e-9)

    def test_tall_template_uses_rows(self, rng):
        cat = build_catalog(TemplateClique.block(3, 2))
        spec = LatticeSpec(3, 5)
        z = three_groups(cat, rng)
        assert log_z_transfer(z, spec) == pytest.approx(log_z_brute(z, spec), abs=1e-10)

    def test_preconditions(self, cat2x2, rng):
        z = PartitionState.single_group(cat2x2)
        with pytest.raises(ValidationError):
            log_z_transfer(z, LatticeSpec(4, 4, "free"))
        with pytest.raises(ValidationError):
            TransferEngine(LatticeSpec(4, 4), cat2x2, CovariateField(np.zeros((4, 4, 1))))
        with pytest.raises(CapExceededError):
            log_z_transfer(PartitionState.single_group(build_catalog(TemplateClique.block(3, 3))), LatticeSpec(5, 5))
        with pytest.raises(CapExceededError):
            log_z_transfer(z, LatticeSpec(13, 13))


class TestGibbs:
    def test_flat_conditionals(self, cat2x2, rng):
        draws = gibbs_batch(PartitionState.single_group(cat2x2), LatticeSpec(4, 4), sweeps=1, rng=rng, size=4000)
        assert abs(draws.mean() - 0.5) < 3 * math.sqrt(0.25 / draws.size)

    def test_independence_mean(self, cat2x2, rng):
        z = state(cat2x2, independence_phi(0.3, cat2x2))
        spec = LatticeSpec(4, 4)
        xs = np.array([gibbs_sample(z, spec, sweeps=1, rng=rng).data for _ in range(2000)])
        se = math.sqrt(0.3 * 0.7 / xs.size)
        assert abs(xs.mean() - 0.3) < 3 * se

    def test_ising_distribution(self, cat2x2, rng):
        spec = LatticeSpec(3, 3)
        z = state(cat2x2, ising_phi(0.4, cat2x2))
        draws = gibbs_batch(z, spec, sweeps=200, rng=rng, size=20000)
        idx = draws.reshape(20000, -1) @ (1 << np.arange(9))
        p = np.exp(get_enumeration(spec, cat2x2).log_probs(z.phi))
        assert sps.chisquare(np.bincount(idx, minlength=512), 20000 * p).pvalue > 0.001

    def test_detailed_balance(self, cat2x2, rng):
        spec = LatticeSpec(3, 3)
        z = three_groups(cat2x2, rng)
        layout = get_layout(spec, cat2x2)
        logp = get_enumeration(spec, cat2x2).log_probs(z.phi)
        table = layout.potential_table(z.phi)
        for _ in range(20):
            x = rng.integers(0, 2, 9)
            s = int(rng.integers(9))
            y = x.copy()
            y[s] ^= 1

            def move(a, b):
                logit = layout.conditional_logits(a, table)[s]
                p_on = 1.0 / (1.0 + math.exp(-logit))
                return p_on if b[s] else 1.0 - p_on

            ix, iy = int(x @ (1 << np.arange(9))), int(y @ (1 << np.arange(9)))
            lhs = math.exp(logp[ix]) * move(x, y)
            rhs = math.exp(logp[iy]) * move(y, x)
            assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_masked_sites_stay_zero(self, cat2x2, rng):
        mask = np.ones((4, 5), bool)
        mask[0, 0] = mask[3, 4] = False
        x = gibbs_sample(state(cat2x2, independence_phi(0.9, cat2x2)), LatticeSpec.with_mask(mask), sweeps=3, rng=rng)
        assert x.data[0, 0] == 0 and x.data[3, 4] == 0

    def test_sweeps_validated(self, cat2x2, rng):
        with pytest.raises(ValidationError):
            gibbs_sample(PartitionState.single_group(cat2x2), LatticeSpec(3, 3), sweeps=0, rng=rng)


class TestRatios:
    @pytest.fixture
    def setup(self, cat2x2, rng):
        spec = LatticeSpec(4, 4)
        x = BinaryImage(rng.integers(0, 2, (4, 4)), spec)
        return spec, x, three_groups(cat2x2, rng), three_groups(cat2x2, rng)

    @pytest.mark.parametrize("name", ["brute", "transfer", "exchange", "pseudo"])
    def test_same_state_is_zero(self, name, setup, cat2x2, rng):
        spec, x, za, _ = setup
        assert make_engine(name, spec, cat2x2).log_lik_ratio(x, za, za, rng) == 0.0

    def test_exact_antisymmetry_and_agreement(self, setup, cat2x2):
        spec, x, za, zb = setup
        brute, transfer = BruteForceEngine(spec, cat2x2), TransferEngine(spec, cat2x2)
        r = brute.log_lik_ratio(x, za, zb)
        assert r == -brute.log_lik_ratio(x, zb, za)
        assert transfer.log_lik_ratio(x, za, zb) == pytest.approx(r, abs=1e-10)

    def test_exchange_formula(self, setup, cat2x2):
        spec, x, za, zb = setup
        eng = ExchangeEngine(spec, cat2x2, sweeps=5)
        r = eng.log_lik_ratio(x, za, zb, np.random.default_rng(4))
        w = eng.auxiliary(za, np.random.default_rng(4))
        lay = get_layout(spec, cat2x2)
        expected = (lay.energy(x.flat, za.phi) - lay.energy(x.flat, zb.phi)
                    + lay.energy(w, zb.phi) - lay.energy(w, za.phi))
        assert r == pytest.approx(expected, abs=1e-12)

    def test_pseudo_likelihood_of_independence_is_exact(self, cat2x2, rng):
        spec = LatticeSpec(3, 4)
        z = state(cat2x2, independence_phi(0.3, cat2x2))
        for _ in range(5):
            x = BinaryImage(rng.integers(0, 2, (3, 4)), spec)
            exact = BruteForceEngine(spec, cat2x2).log_likelihood(x, z)
            assert pseudo_log_likelihood(x, z) == pytest.approx(exact, abs=1e-10)

    def test_pseudo_difference(self, setup, cat2x2):
        spec, x, za, zb = setup
        eng = PseudoLikelihoodEngine(spec, cat2x2)
        assert eng.log_lik_ratio(x, za, zb) == pytest.approx(
            pseudo_log_likelihood(x, za) - pseudo_log_likelihood(x, zb))

    def test_exchange_chain_matches_exact_on_two_states(self, cat2x2):
        # MH between two fixed states with a flat prior; occupancy must match
        # the exact posterior odds
        spec = LatticeSpec(4, 4)
        states = [state(cat2x2, ising_phi(0.2, cat2x2)), state(cat2x2, ising_phi(0.5, cat2x2))]
        x = BinaryImage(gibbs_batch(states[1], spec, sweeps=100, rng=np.random.default_rng(1), size=1)[0], spec)
        exact = BruteForceEngine(spec, cat2x2)
        lp = np.array([exact.log_likelihood(x, s) for s in states])
        target = np.exp(lp - np.logaddexp.reduce(lp))[1]
        eng = ExchangeEngine(spec, cat2x2, sweeps=10)
        rng = np.random.default_rng(9)
        cur, visits = 0, []
        for _ in range(4000):
            new = 1 - cur
            if math.log(rng.random()) < eng.log_lik_ratio(x, states[new], states[cur], rng):
                cur = new
            visits.append(cur)
        v = np.array(visits, float)
        batches = v.reshape(40, -1).mean(axis=1)
        se = batches.std(ddof=1) / math.sqrt(40)
        assert abs(v.mean() - target) < 3 * se + 1e-3

    def test_unknown_engine(self, cat2x2):
        with pytest.raises(ValidationError):
            make_engine("pomm", LatticeSpec(4, 4), cat2x2)
