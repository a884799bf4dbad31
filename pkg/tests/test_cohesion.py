import math
from collections import Counter

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, optimize

from ppmx_mixt.cohesion import (UScaleAdapter, brute_force_eppf, log_cohesion, log_cohesion_ratio,
                                log_eppf, log_u_density_unnorm, ppmx_prior_masses, prior_k_distribution,
                                sample_prior_partition, sample_prior_partitions, sample_u, set_partitions,
                                u_mode)
from ppmx_mixt.core import ChainState, MixedCovariateMatrix, NggParams, Partition, SimilarityConfig

BELL = [1, 1, 2, 5, 15, 52, 203, 877, 4140]


def test_log_cohesion_singleton():
    p = NggParams(0.7, 0.3)
    assert log_cohesion(2.5, 1, p) == pytest.approx(math.log(0.7) + (0.3 - 1) * math.log(3.5))


def test_log_cohesion_dp_limit():
    assert log_cohesion(0.0, 4, NggParams(1.0, 0.0)) == pytest.approx(math.log(6))


def test_log_cohesion_high_precision():
    mp.mp.dps = 40
    ref = mp.log(mp.mpf("0.5") * mp.gamma(mp.mpf("1.85")) / mp.gamma(mp.mpf("0.85")) * mp.mpf(2) ** mp.mpf("-1.85"))
    assert log_cohesion(1.0, 2, NggParams(0.5, 0.15)) == pytest.approx(float(ref), abs=1e-13)


def test_cohesion_ratio_examples():
    assert log_cohesion_ratio(0.0, 3, NggParams(1.0, 0.0)) == pytest.approx(math.log(3))
    assert log_cohesion_ratio(0.0, 0, NggParams(0.5, 0.15)) == pytest.approx(math.log(0.5))


@given(st.floats(1e-3, 1e3), st.integers(1, 200), st.floats(0.01, 10), st.floats(0, 0.95))
def test_cohesion_ratio_identity(u, nj, kappa, sigma):
    p = NggParams(kappa, sigma)
    assert log_cohesion(u, nj + 1, p) - log_cohesion(u, nj, p) == pytest.approx(
        log_cohesion_ratio(u, nj, p), abs=1e-9)
    # new block: c(u, 1) times the (1 + u) factor shared with the existing-block form
    assert log_cohesion(u, 1, p) + math.log1p(u) == pytest.approx(log_cohesion_ratio(u, 0, p), abs=1e-9)


def test_u_density_examples():
    assert log_u_density_unnorm(1e-300, 1, 1, NggParams(1.0, 0.3)) == pytest.approx(0.0, abs=1e-12)
    assert log_u_density_unnorm(1.0, 3, 2, NggParams(1.0, 0.0)) == pytest.approx(-4 * math.log(2))


def test_u_density_sigma_continuity():
    a = log_u_density_unnorm(2.0, 10, 3, NggParams(0.8, 0.0))
    b = log_u_density_unnorm(2.0, 10, 3, NggParams(0.8, 1e-9))
    assert a == pytest.approx(b, abs=1e-7)


def test_u_mode_golden_section():
    p = NggParams(0.5, 0.15)
    res = optimize.minimize_scalar(lambda u: -log_u_density_unnorm(u, 200, 5, p),
                                   bracket=(math.exp(2), math.exp(6), math.exp(10)), method="golden", tol=1e-12)
    assert u_mode(200, 5, p) == pytest.approx(res.x, rel=1e-6)


def _u_cdf_oracle(n, k, p, vgrid):
    # trapezoid rule in v = log u, where the density picks up the Jacobian u
    logd = np.array([log_u_density_unnorm(math.exp(v), n, k, p) + v for v in vgrid])
    dens = np.exp(logd - logd.max())
    cdf = integrate.cumulative_trapezoid(dens, vgrid, initial=0.0)
    return cdf / cdf[-1]


@pytest.mark.parametrize("n,k,kappa,sigma", [(10, 3, 1.0, 0.3), (30, 4, 3.0, 0.0)])
def test_u_chain_matches_density(n, k, kappa, sigma):
    p = NggParams(kappa, sigma)
    rng = np.random.default_rng(5)
    state = ChainState(Partition(np.arange(n) % k), [None] * k, u_mode(n, k, p))
    sd = 0.8 * u_mode(n, k, p)
    draws = np.empty(100_000)
    for t in range(draws.size):
        sample_u(state, sd, p, rng)
        draws[t] = state.u
    v0 = math.log(u_mode(n, k, p))
    vgrid = np.linspace(v0 - 25, v0 + 25, 200_001)
    cdf = _u_cdf_oracle(n, k, p, vgrid)
    emp = np.searchsorted(np.sort(np.log(draws)), vgrid, side="right") / draws.size
    assert np.max(np.abs(emp - cdf)) < 0.02
    assert (draws > 0).all()


def test_u_proposal_equal_accepted():
    # a zero-width proposal returns the current value and is accepted
    p = NggParams(1.0, 0.2)
    state = ChainState(Partition([0, 0, 1]), [None] * 2, 1.3)
    u, ok = sample_u(state, 1e-300, p, np.random.default_rng(0))
    assert ok and u == pytest.approx(1.3)


def test_adapter_moves_toward_target():
    a = UScaleAdapter(1.0)
    for _ in range(50):
        a.update(True)
    assert a.sd > 1.0
    b = UScaleAdapter(1.0)
    for _ in range(50):
        b.update(False)
    assert b.sd < 1.0


def test_set_partitions_bell_numbers():
    for n in range(1, 8):
        assert sum(1 for _ in set_partitions(n)) == BELL[n]


def test_eppf_dp_limit_n3():
    probs = brute_force_eppf(3, NggParams(1.0, 1e-8))
    assert probs[Partition([0, 0, 0])] == pytest.approx(1 / 3, abs=1e-6)
    assert probs[Partition([0, 1, 2])] == pytest.approx(1 / 6, abs=1e-6)
    for lab in ([0, 0, 1], [0, 1, 0], [0, 1, 1]):
        assert probs[Partition(lab)] == pytest.approx(1 / 6, abs=1e-6)


@pytest.mark.parametrize("n,kappa,sigma", [(4, 1.0, 0.0), (5, 0.5, 0.15), (6, 1.0, 0.3), (7, 0.3, 0.2),
                                           (5, 0.001, 0.2), (5, 20.0, 0.7)])
def test_eppf_sums_to_one(n, kappa, sigma):
    probs = brute_force_eppf(n, NggParams(kappa, sigma))
    assert len(probs) == BELL[n]
    assert sum(probs.values()) == pytest.approx(1.0, abs=1e-8)


def test_eppf_n2_against_mpmath():
    kappa, sigma = 1.0, 0.5
    mp.mp.dps = 30

    def integrand(sizes):
        def f(u):
            psi = kappa / sigma * ((1 + u) ** sigma - 1)
            val = u / mp.gamma(2) * mp.e ** (-psi)
            for nj in sizes:
                val *= kappa * mp.gamma(nj - sigma) / mp.gamma(1 - sigma) * (1 + u) ** (-(nj - sigma))
            return val
        return mp.quad(f, [0, 1, 10, 100, mp.inf])

    together, apart = integrand([2]), integrand([1, 1])
    p = NggParams(kappa, sigma)
    assert math.exp(log_eppf([2], p)) == pytest.approx(float(together), rel=1e-9)
    assert math.exp(log_eppf([1, 1], p)) == pytest.approx(float(apart), rel=1e-9)
    ratio = math.exp(log_eppf([2], p) - log_eppf([1, 1], p))
    assert ratio == pytest.approx(float(together / apart), rel=1e-9)


def test_eppf_symmetry():
    probs = brute_force_eppf(5, NggParams(0.8, 0.25))
    by_sizes = {}
    for part, pr in probs.items():
        by_sizes.setdefault(tuple(sorted(part.sizes.tolist())), []).append(pr)
    for vals in by_sizes.values():
        assert max(vals) - min(vals) < 1e-14


def _marginalize_last(probs5):
    out = Counter()
    for part, pr in probs5.items():
        out[Partition.from_labels(part.allocations[:4])] += pr
    return out


def test_marginal_invariance_constant_similarity():
    p = NggParams(0.7, 0.3)
    p4 = brute_force_eppf(4, p)
    marg = _marginalize_last(brute_force_eppf(5, p))
    for part, pr in p4.items():
        assert marg[part] == pytest.approx(pr, abs=1e-6)


def test_marginal_invariance_fails_with_covariates(rng):
    p = NggParams(0.7, 0.3)
    cfg = SimilarityConfig("GC", 2.0)
    X = MixedCovariateMatrix.from_arrays(rng.standard_normal((5, 2)) * 2, None)
    m5 = ppmx_prior_masses(5, p, cfg, X)
    m4 = ppmx_prior_masses(4, p, cfg, X.subset(np.arange(4)))
    z5, z4 = sum(m5.values()), sum(m4.values())
    marg = _marginalize_last({k: v / z5 for k, v in m5.items()})
    err = max(abs(marg[part] - v / z4) for part, v in m4.items())
    assert err > 1e-3


@given(st.integers(0, 1000), st.sampled_from(["GA", "GB", "GC"]))
def test_similarity_mass_bound(seed, fam):
    r = np.random.default_rng(seed)
    X = MixedCovariateMatrix.from_arrays(r.standard_normal((5, 1)), r.integers(0, 2, (5, 1)))
    masses = ppmx_prior_masses(5, NggParams(1.0, 0.3), SimilarityConfig(fam, 1.0, 1.5), X)
    assert sum(masses.values()) <= 1 + 1e-8


def test_prior_k_distribution_matches_enumeration():
    p = NggParams(0.6, 0.35)
    probs = brute_force_eppf(6, p)
    pk = np.zeros(7)
    for part, pr in probs.items():
        pk[part.k] += pr
    np.testing.assert_allclose(prior_k_distribution(6, p), pk, atol=1e-9)


def test_single_item_prior():
    assert sample_prior_partition(1, NggParams(1.0, 0.2)) == Partition([0])


def test_prior_gibbs_matches_eppf_short():
    p = NggParams(1.0, 0.3)
    draws = sample_prior_partitions(4, p, n_draws=40_000, rng=11, burnin=500)
    freq = Counter(tuple(r) for r in draws.tolist())
    exact = brute_force_eppf(4, p)
    tv = 0.5 * sum(abs(freq.get(part.key(), 0) / len(draws) - pr) for part, pr in exact.items())
    assert tv < 0.02


def test_prior_gibbs_respects_similarity(rng):
    # exact covariate-dependent prior for n = 4 versus the Gibbs sampler
    p = NggParams(1.0, 0.2)
    cfg = SimilarityConfig("GC", 1.0)
    X = MixedCovariateMatrix.from_arrays(np.array([[0.0], [0.1], [3.0], [3.2]]), None, metric="identity")
    masses = ppmx_prior_masses(4, p, cfg, X)
    z = sum(masses.values())
    draws = sample_prior_partitions(4, p, cfg, X, n_draws=40_000, rng=3, burnin=500)
    freq = Counter(tuple(r) for r in draws.tolist())
    tv = 0.5 * sum(abs(freq.get(part.key(), 0) / len(draws) - m / z) for part, m in masses.items())
    assert tv < 0.02


def test_prior_draws_are_canonical():
    draws = sample_prior_partitions(12, NggParams(1.0, 0.2), n_draws=50, rng=1, burnin=20)
    for row in draws:
        assert Partition.from_labels(row).allocations.tolist() == row.tolist()
