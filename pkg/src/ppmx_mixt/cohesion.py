"""NGG cohesion, the auxiliary variable ``u`` and prior partition machinery.

For the normalized generalized gamma process with total mass kappa and
discount sigma the partition prior, conditional on the auxiliary ``u > 0``,
is a product partition model with cohesion

    c(u, n_j) = kappa * Gamma(n_j - sigma) / Gamma(1 - sigma) * (1 + u)^-(n_j - sigma)

and ``u`` is mixed over with weight

    D(u, n) = u^(n-1) / Gamma(n) * exp(-Psi(u)),  Psi(u) = kappa/sigma * ((1+u)^sigma - 1).

sigma = 0 is the Dirichlet process; there Psi(u) = kappa * log(1 + u).
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize
from scipy.special import gammaln, logsumexp

from . import _kernels as K
from .core import ChainState, MixedCovariateMatrix, NggParams, Partition, SimilarityConfig
from .errors import QuadratureFailure
from .similarity import WEISZFELD_MAXIT, WEISZFELD_TOL, compactness, log_similarity


def _psi(u, params: NggParams):
    l1 = np.log1p(u)
    if params.sigma == 0:
        return params.kappa * l1
    return params.kappa * np.expm1(params.sigma * l1) / params.sigma


def log_cohesion(u, nj, params: NggParams):
    """log c(u, n_j)."""
    s = params.sigma
    return (math.log(params.kappa) + gammaln(nj - s) - gammaln(1 - s)
            - (nj - s) * np.log1p(u))


def log_cohesion_ratio(u, nj, params: NggParams):
    """log c(u, n_j + 1) / c(u, n_j) for n_j > 0; the new-block weight at n_j = 0.

    The new-block value log(kappa) + sigma*log(1+u) is c(u, 1) multiplied by
    (1 + u). In a Gibbs step it must be paired with existing-block weights
    (n_j - sigma) on that same scale, i.e. without the 1/(1+u) factor.
    """
    if nj == 0:
        return math.log(params.kappa) + params.sigma * math.log1p(u)
    return math.log(nj - params.sigma) - math.log1p(u)


def log_u_density_unnorm(u, n, k, params: NggParams) -> float:
    """Full conditional of ``u`` given a partition with k blocks, up to a constant."""
    return K.log_u_density(float(u), n, k, params.kappa, params.sigma)


def u_mode(n, k, params: NggParams) -> float:
    """Mode of the ``u`` full conditional (0 when the density is decreasing)."""
    if n <= 1:
        return 0.0
    s, kap = params.sigma, params.kappa

    def score(u):
        return (n - 1) / u - (n - s * k) / (1 + u) - kap * (1 + u) ** (s - 1)

    lo, hi = 1e-12, 1.0
    while score(hi) > 0:
        hi *= 2
        if hi > 1e300:
            return hi
    return optimize.brentq(score, lo, hi, xtol=1e-12, rtol=1e-14)


def sample_u(state: ChainState, proposal_sd: float, params: NggParams, rng) -> tuple[float, bool]:
    """One truncated-Gaussian Metropolis-Hastings step on ``state.u`` (in place)."""
    n, k = state.partition.n, state.partition.k
    u, ok = K.u_mh_step_seeded(float(state.u), n, k, params.kappa, params.sigma,
                               float(proposal_sd), _seed(rng))
    state.u = u
    return u, bool(ok)


def _seed(rng) -> int:
    return int(rng.integers(0, 2**31 - 1))


class UScaleAdapter:
    """Batch-wise proposal scale adaptation toward 0.44 acceptance."""

    def __init__(self, sd, target=0.44, batch=50):
        self.sd = float(sd)
        self.target = target
        self.batch = batch
        self._acc = 0
        self._count = 0
        self._batches = 0

    def update(self, accepted: bool):
        self._acc += accepted
        self._count += 1
        if self._count == self.batch:
            self._batches += 1
            rate = self._acc / self.batch
            self.sd *= math.exp((rate - self.target) / math.sqrt(self._batches) * 2.0)
            self._acc = self._count = 0


def initial_u(n, k, params) -> tuple[float, float]:
    """Starting value and proposal scale for ``u``."""
    u0 = max(u_mode(n, k, params), 1e-3)
    return u0, max(0.5 * u0, 0.05)


# ---------------------------------------------------------------------------
# prior simulation


class _BlockState:
    """Numba-side block bookkeeping for a partition of n items."""

    def __init__(self, alloc, X: MixedCovariateMatrix | None, cfg: SimilarityConfig):
        alloc = np.array(alloc, dtype=np.int64)
        n = len(alloc)
        self.n = n
        self.s = alloc
        self.k = int(alloc.max()) + 1 if n else 0
        self.sizes = np.zeros(n + 1, dtype=np.int64)
        self.members = np.zeros((n + 1, n), dtype=np.int64)
        self.pos = np.zeros(n, dtype=np.int64)
        K.init_blocks(self.s, self.k, self.sizes, self.members, self.pos)
        if X is None:
            self.Z = np.zeros((n, 0))
            self.B = np.zeros((n, 0), dtype=np.int64)
            self.wc, self.wb = 0.0, 0.0
        else:
            self.Z = X.whitened
            self.B = np.ascontiguousarray(X.binary, dtype=np.int64)
            self.wc, self.wb = X.weights
        self.fam = cfg.family.code
        self.lam = float(cfg.lam)
        self.alpha = float(cfg.alpha)
        mc, mb = self.Z.shape[1], self.B.shape[1]
        self.cent = np.zeros((n + 1, mc))
        self.dc = np.zeros(n + 1)
        self.ones = np.zeros((n + 1, mb), dtype=np.int64)
        self.dtot = np.zeros(n + 1)
        if self.fam != K.FAM_ONE:
            K.init_sim_cache(self.k, self.sizes, self.members, self.Z, self.B, self.cent, self.dc,
                             self.ones, self.dtot, self.wc, self.wb, WEISZFELD_TOL, WEISZFELD_MAXIT)

    def sim_args(self):
        return (self.Z, self.B, self.fam, self.lam, self.alpha, self.wc, self.wb,
                self.cent, self.dc, self.ones, self.dtot, WEISZFELD_TOL, WEISZFELD_MAXIT)

    def partition(self) -> Partition:
        return Partition.from_labels(self.s)


def sample_prior_partitions(n, params: NggParams, cfg: SimilarityConfig | None = None,
                            X: MixedCovariateMatrix | None = None, n_draws=1000, rng=None,
                            burnin=500, thin=1, init=None, return_u=False):
    """Draws from the covariate-dependent partition prior by likelihood-free Gibbs.

    Returns an ``(n_draws, n)`` array of allocations in canonical labeling.
    With ``cfg`` of family ONE the target is the exact NGG partition law.
    """
    rng = np.random.default_rng(rng)
    cfg = cfg or SimilarityConfig()
    if not cfg.is_constant and X is None:
        raise ValueError("a similarity other than ONE needs covariates")
    alloc = np.arange(n) if init is None else np.asarray(init)
    st = _BlockState(alloc, X if not cfg.is_constant else None, cfg)
    u, sd = initial_u(n, st.k, params)
    adapter = UScaleAdapter(sd)
    dummy_alloc = np.zeros((1, n), dtype=np.int64)
    dummy_u = np.zeros(1)
    chunk = 50
    done = 0
    while done < burnin:
        m = min(chunk, burnin - done)
        for _ in range(m):
            st.k, u, acc = K.prior_chain(st.s, st.k, st.sizes, st.members, st.pos, *st.sim_args(),
                                         u, params.kappa, params.sigma, adapter.sd, 1, 2, dummy_alloc,
                                         dummy_u, _seed(rng))
            adapter.update(bool(acc))
        done += m
    out = np.empty((n_draws, n), dtype=np.int64)
    us = np.empty(n_draws)
    block = max(1, 200_000 // max(n * thin, 1))
    rec = 0
    while rec < n_draws:
        m = min(block, n_draws - rec)
        st.k, u, _ = K.prior_chain(st.s, st.k, st.sizes, st.members, st.pos, *st.sim_args(),
                                   u, params.kappa, params.sigma, adapter.sd, m * thin, thin,
                                   out[rec: rec + m], us[rec: rec + m], _seed(rng))
        rec += m
    for r in range(n_draws):
        out[r] = _canon(out[r])
    return (out, us) if return_u else out


def _canon(a):
    from .core import canonical_labels
    return canonical_labels(a)


def sample_prior_partition(n, params: NggParams, cfg: SimilarityConfig | None = None,
                           X: MixedCovariateMatrix | None = None, rng=None, n_sweeps=200) -> Partition:
    """One prior draw: the final state of a short likelihood-free Gibbs run."""
    if n == 1:
        return Partition([0])
    draws = sample_prior_partitions(n, params, cfg, X, n_draws=1, rng=rng, burnin=n_sweeps)
    return Partition(draws[0])


# ---------------------------------------------------------------------------
# exact computations for small n


def set_partitions(n):
    """All set partitions of range(n) as restricted-growth label tuples."""
    if n == 0:
        yield ()
        return
    labels = [0] * n

    def rec(i, kmax):
        if i == n:
            yield tuple(labels)
            return
        for j in range(kmax + 2):
            labels[i] = j
            yield from rec(i + 1, max(kmax, j))

    labels[0] = 0
    yield from rec(1, 0)


def _log_integrand(v, n, sizes, params):
    u = math.exp(v)
    val = n * v - gammaln(n) - _psi(u, params)
    for nj in sizes:
        val += log_cohesion(u, nj, params)
    return val


@lru_cache(maxsize=4096)
def _log_eppf_sizes(sizes: tuple, kappa: float, sigma: float, epsrel=1e-10) -> float:
    params = NggParams(kappa, sigma)
    n = sum(sizes)
    return _log_u_integral(lambda v: _log_integrand(v, n, sizes, params), epsrel)


def _log_u_integral(logf, epsrel=1e-10):
    """log of the integral over v = log u of exp(logf(v)), shifted at the mode."""
    res = optimize.minimize_scalar(lambda v: -logf(v), bracket=(-5.0, 5.0))
    v0 = float(res.x)
    f0 = logf(v0)

    def f(v):
        if abs(v) > 700:
            # the integrand vanishes at both ends in v
            return 0.0
        return math.exp(logf(v) - f0)

    total, err = 0.0, 0.0
    for lo, hi in ((-np.inf, v0), (v0, np.inf)):
        val, e = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=epsrel, limit=500)
        total += val
        err += e
    if not np.isfinite(total) or total <= 0 or err > 1e-8 * total:
        raise QuadratureFailure(f"quadrature error estimate {err:.3g} for integral {total:.3g}")
    return f0 + math.log(total)


def log_eppf(partition_or_sizes, params: NggParams) -> float:
    """log probability of a partition under the NGG exchangeable partition law."""
    if isinstance(partition_or_sizes, Partition):
        sizes = partition_or_sizes.sizes
    else:
        sizes = partition_or_sizes
    key = tuple(sorted(int(x) for x in sizes))
    return _log_eppf_sizes(key, float(params.kappa), float(params.sigma))


def brute_force_eppf(n, params: NggParams) -> dict:
    """Map every set partition of ``n <= 8`` items to its probability."""
    if n > 8:
        raise ValueError("enumeration limited to n <= 8")
    out = {}
    for labels in set_partitions(n):
        p = Partition(labels)
        out[p] = math.exp(log_eppf(p, params))
    return out


def ppmx_prior_masses(n, params: NggParams, cfg: SimilarityConfig, X: MixedCovariateMatrix) -> dict:
    """Unnormalized covariate-dependent prior masses, one per set partition.

    ``g`` does not depend on ``u``, so each mass is the NGG probability times the
    product of block similarities; their sum is the normalizing constant M_g.
    """
    out = {}
    for labels in set_partitions(n):
        p = Partition(labels)
        lg = sum(log_similarity(compactness(b, X).d_total, cfg) for b in p.blocks)
        out[p] = math.exp(log_eppf(p, params) + lg)
    return out


def log_generalized_stirling(n, sigma) -> np.ndarray:
    """log of sum over partitions of n items into k blocks of prod_j (1-sigma)_(n_j - 1).

    Row ``k`` of the returned vector (length n+1) holds that value for k blocks.
    """
    S = np.full(n + 1, -np.inf)
    S[1] = 0.0
    for m in range(1, n):
        new = np.full(n + 1, -np.inf)
        ks = np.arange(1, m + 2)
        grow = np.where(m - ks * sigma > 0, np.log(np.maximum(m - ks * sigma, 1e-300)), -np.inf) + S[ks]
        new[ks] = np.logaddexp(grow, S[ks - 1])
        S = new
    return S


def prior_k_distribution(n, params: NggParams) -> np.ndarray:
    """Exact prior law of the number of blocks (index k = 0..n) under the NGG prior."""
    logS = log_generalized_stirling(n, params.sigma)
    logp = np.full(n + 1, -np.inf)
    for k in range(1, n + 1):
        if not np.isfinite(logS[k]):
            continue

        def logf(v, k=k):
            u = math.exp(v)
            return (n * v - gammaln(n) - _psi(u, params) - (n - k * params.sigma) * math.log1p(u))

        logp[k] = k * math.log(params.kappa) + logS[k] + _log_u_integral(logf, 1e-10)
    p = np.exp(logp - logsumexp(logp))
    return p


def prior_k_moments(n, params: NggParams) -> tuple[float, float]:
    p = prior_k_distribution(n, params)
    k = np.arange(n + 1)
    mean = float(p @ k)
    return mean, float(p @ (k - mean) ** 2)
