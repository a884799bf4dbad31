"""Collapsed Gibbs sampler for PPMx-mixt with a Gaussian linear regression kernel.

Within block j the responses follow y_i = x_i' beta_j + N(0, sigma2_j) with the
conjugate prior beta_j | sigma2_j ~ N(mu0, sigma2_j B0), sigma2_j ~ IG(a0, b0).
Block parameters integrate out in the reassignment step; they are drawn
explicitly once per sweep for recording and prediction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from . import _kernels as K
from .cohesion import UScaleAdapter, _BlockState, _seed, initial_u
from .core import ChainState, ConjClusterParams, MixedCovariateMatrix, NggParams, Partition, SimilarityConfig
from .errors import ConfigError, DimensionMismatch, NumericalFailure
from .trace import TraceStore

LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class ConjPriorConfig:
    mu0: np.ndarray
    B0: np.ndarray
    a0: float = 2.0
    b0: float = 1.0

    def __post_init__(self):
        mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=float))
        B0 = np.atleast_2d(np.asarray(self.B0, dtype=float))
        if B0.shape != (mu0.size, mu0.size):
            raise ConfigError("prior.B0 must be p x p with p = len(mu0)")
        if not np.allclose(B0, B0.T):
            raise ConfigError("prior.B0 must be symmetric")
        try:
            np.linalg.cholesky(B0)
        except np.linalg.LinAlgError:
            raise ConfigError("prior.B0 must be positive definite") from None
        if not (self.a0 > 0 and self.b0 > 0):
            raise ConfigError("prior.a0 and prior.b0 must be positive")
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "B0", B0)
        cf = linalg.cho_factor(B0, lower=True)
        P0 = linalg.cho_solve(cf, np.eye(mu0.size))
        P0 = 0.5 * (P0 + P0.T)
        object.__setattr__(self, "_P0", P0)
        object.__setattr__(self, "_logdetP0", -2.0 * float(np.log(np.diag(cf[0])).sum()))

    @classmethod
    def isotropic(cls, p, B0_scale=100.0, a0=2.0, b0=1.0, mu0=None):
        mu0 = np.zeros(p) if mu0 is None else mu0
        return cls(mu0, B0_scale * np.eye(p), a0, b0)

    @property
    def p(self) -> int:
        return self.mu0.size

    @property
    def P0(self) -> np.ndarray:
        return self._P0

    @property
    def h0(self) -> np.ndarray:
        return self._P0 @ self.mu0

    @property
    def q0(self) -> float:
        return float(self.mu0 @ self._P0 @ self.mu0)

    @property
    def logdetP0(self) -> float:
        return self._logdetP0


@dataclass
class SufficientStats:
    n: int
    XtX: np.ndarray
    Xty: np.ndarray
    yty: float

    @classmethod
    def empty(cls, p):
        return cls(0, np.zeros((p, p)), np.zeros(p), 0.0)

    @classmethod
    def from_data(cls, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return cls(len(y), X.T @ X, X.T @ y, float(y @ y))

    def add(self, x, y):
        x = np.asarray(x, dtype=float)
        return SufficientStats(self.n + 1, self.XtX + np.outer(x, x), self.Xty + x * y, self.yty + y * y)

    def remove(self, x, y):
        x = np.asarray(x, dtype=float)
        return SufficientStats(self.n - 1, self.XtX - np.outer(x, x), self.Xty - x * y, self.yty - y * y)


def _posterior(stats: SufficientStats, prior: ConjPriorConfig):
    P = prior.P0 + stats.XtX
    h = prior.h0 + stats.Xty
    cf = linalg.cho_factor(P, lower=True)
    mu = linalg.cho_solve(cf, h)
    aj = prior.a0 + 0.5 * stats.n
    bj = prior.b0 + 0.5 * (stats.yty + prior.q0 - float(h @ mu))
    if not bj > 0:
        raise NumericalFailure(f"posterior scale b_j = {bj} is not positive")
    return cf, mu, aj, bj


def log_marginal(stats: SufficientStats, prior: ConjPriorConfig) -> float:
    """Closed-form log marginal density of a block's responses."""
    if stats.n == 0:
        return 0.0
    cf, _, aj, bj = _posterior(stats, prior)
    logdetP = 2.0 * float(np.log(np.diag(cf[0])).sum())
    return (-0.5 * stats.n * LOG_2PI + 0.5 * (prior.logdetP0 - logdetP)
            + prior.a0 * math.log(prior.b0) - aj * math.log(bj) + gammaln(aj) - gammaln(prior.a0))


def update_cluster_params(stats: SufficientStats, prior: ConjPriorConfig, rng) -> ConjClusterParams:
    """Exact draw of (beta_j, sigma2_j) from the normal-inverse-gamma full conditional."""
    cf, mu, aj, bj = _posterior(stats, prior)
    s2 = bj / rng.gamma(aj)
    z = rng.standard_normal(prior.p)
    # P = L L', so L'^{-1} z has covariance P^{-1} = B_j
    beta = mu + math.sqrt(s2) * linalg.solve_triangular(cf[0], z, lower=True, trans="T")
    return ConjClusterParams(beta, s2)


# ---------------------------------------------------------------------------
# sampler


@dataclass(frozen=True)
class RegressionData:
    """Design matrix, responses and the covariates the similarity acts on."""
    X: np.ndarray
    y: np.ndarray
    covariates: MixedCovariateMatrix | None = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise DimensionMismatch("design rows and responses differ in length")
        if self.covariates is not None and self.covariates.n != y.size:
            raise DimensionMismatch("covariate rows and responses differ in length")
        object.__setattr__(self, "X", np.ascontiguousarray(X))
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "RegressionData":
        idx = np.asarray(idx)
        cov = None if self.covariates is None else self.covariates.subset(idx)
        return RegressionData(self.X[idx], self.y[idx], cov)


@dataclass
class ConjugateConfig:
    ngg: NggParams = field(default_factory=lambda: NggParams(1.0, 0.0))
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    prior: ConjPriorConfig | None = None
    n_iter: int = 1000
    n_burnin: int = 500
    thin: int = 1
    init: str = "singletons"
    init_k: int = 5
    u_proposal_sd: float | None = None
    random_order: bool = True

    def validate(self, p=None):
        if self.n_iter < 0 or self.n_burnin < 0 or self.n_burnin > self.n_iter:
            raise ConfigError("need 0 <= sampler.n_burnin <= sampler.n_iter")
        if self.thin < 1:
            raise ConfigError("sampler.thin must be >= 1")
        if self.init not in ("singletons", "one", "kmeans"):
            raise ConfigError(f"sampler.init: unknown value {self.init!r}")
        if self.u_proposal_sd is not None and not self.u_proposal_sd > 0:
            raise ConfigError("sampler.u_proposal_sd must be positive")
        if p is not None and self.prior is not None and self.prior.p != p:
            raise ConfigError("prior dimension does not match the design matrix")


def kmeans_labels(Z, k, rng, n_iter=50) -> np.ndarray:
    """Plain Lloyd iterations on the rows of ``Z``; used only for warm starts."""
    n = Z.shape[0]
    k = max(1, min(k, n))
    C = Z[rng.choice(n, k, replace=False)]
    lab = np.zeros(n, dtype=np.int64)
    for _ in range(n_iter):
        d = ((Z[:, None, :] - C[None]) ** 2).sum(-1)
        new = d.argmin(1)
        if np.array_equal(new, lab):
            break
        lab = new
        for j in range(k):
            if np.any(lab == j):
                C[j] = Z[lab == j].mean(0)
    return lab


class ConjugateSampler:
    """Holds the compiled-kernel state of one chain."""

    def __init__(self, data: RegressionData, config: ConjugateConfig, rng, init_partition=None):
        config.validate(data.p)
        self.data = data
        self.cfg = config
        self.rng = rng
        self.prior = config.prior or ConjPriorConfig.isotropic(data.p)
        n, p = data.n, data.p
        if init_partition is not None:
            labels = init_partition.allocations if isinstance(init_partition, Partition) else init_partition
            alloc = Partition.from_labels(labels).allocations.copy()
        elif config.init == "one":
            alloc = np.zeros(n, dtype=np.int64)
        elif config.init == "kmeans":
            feats = data.covariates.whitened if data.covariates is not None and data.covariates.m_c else data.X
            alloc = Partition.from_labels(kmeans_labels(np.column_stack([feats, data.y]), config.init_k, rng)).allocations.copy()
        else:
            alloc = np.arange(n, dtype=np.int64)
        sim = config.similarity
        if not sim.is_constant and data.covariates is None:
            raise ConfigError("a similarity other than ONE needs covariates")
        self.blocks = _BlockState(alloc, data.covariates if not sim.is_constant else None, sim)
        kmax = n + 1
        self.XtX = np.zeros((kmax, p, p))
        self.Xty = np.zeros((kmax, p))
        self.yty = np.zeros(kmax)
        self.logm = np.zeros(kmax)
        self._P0 = np.ascontiguousarray(self.prior.P0)
        self._h0 = np.ascontiguousarray(self.prior.h0)
        self.refresh()
        u0, sd0 = initial_u(n, self.blocks.k, config.ngg)
        self.u = u0
        self.adapter = UScaleAdapter(config.u_proposal_sd or sd0)
        self.params = self.draw_params()

    @property
    def k(self) -> int:
        return self.blocks.k

    @property
    def partition(self) -> Partition:
        return self.blocks.partition()

    def refresh(self):
        b = self.blocks
        K.refresh_stats(b.s, b.k, self.data.X, self.data.y, self.XtX, self.Xty, self.yty)
        for j in range(b.k):
            self.logm[j] = log_marginal(self.stats(j), self.prior)

    def stats(self, j) -> SufficientStats:
        return SufficientStats(int(self.blocks.sizes[j]), self.XtX[j].copy(), self.Xty[j].copy(),
                               float(self.yty[j]))

    def sample_u(self, adapt=False):
        ngg = self.cfg.ngg
        self.u, ok = K.u_update_seeded(self.u, self.data.n, self.k, ngg.kappa, ngg.sigma,
                                       self.adapter.sd, _seed(self.rng))
        if adapt and self.cfg.u_proposal_sd is None:
            self.adapter.update(bool(ok))
        return ok

    def draw_params(self) -> np.ndarray:
        """One NIG draw per block; rows are (beta..., sigma2)."""
        out = np.empty((self.k, self.data.p + 1))
        for j in range(self.k):
            th = update_cluster_params(self.stats(j), self.prior, self.rng)
            out[j, :-1] = th.beta
            out[j, -1] = th.sigma2
        self.params = out
        return out

    def item_loglik(self) -> np.ndarray:
        s = self.blocks.s
        beta = self.params[s, :-1]
        s2 = self.params[s, -1]
        r = self.data.y - np.einsum("ij,ij->i", self.data.X, beta)
        return -0.5 * (LOG_2PI + np.log(s2)) - 0.5 * r * r / s2

    def reassign(self, order=None):
        b = self.blocks
        if order is None:
            order = self.rng.permutation(self.data.n) if self.cfg.random_order else np.arange(self.data.n)
        ngg = self.cfg.ngg
        pr = self.prior
        b.k = K.conj_reassign(np.asarray(order, dtype=np.int64), b.s, b.k, b.sizes, b.members, b.pos,
                              self.data.X, self.data.y, True, self.XtX, self.Xty, self.yty, self.logm,
                              self._P0, self._h0, pr.q0, pr.a0, pr.b0, pr.logdetP0, *b.sim_args(),
                              self.u, ngg.kappa, ngg.sigma, _seed(self.rng))
        if not np.all(np.isfinite(self.logm[: b.k])):
            raise NumericalFailure("non-finite block marginal during reassignment")

    def sweep(self, adapt=False, record=None):
        self.sample_u(adapt)
        self.refresh()
        self.draw_params()
        if record is not None:
            record.append(self.blocks.s, self.u, self.params, self.item_loglik())
        self.reassign()

    def state(self) -> ChainState:
        params = [ConjClusterParams(r[:-1].copy(), float(r[-1])) for r in self.params]
        return ChainState(self.partition, params, self.u)


def reassign_item(i, state: ChainState, data: RegressionData, prior: ConjPriorConfig,
                  ngg: NggParams, sim: SimilarityConfig, rng) -> ChainState:
    """Reassign one item given the rest of the partition (block parameters integrated out)."""
    cfg = ConjugateConfig(ngg=ngg, similarity=sim, prior=prior)
    smp = ConjugateSampler(data, cfg, rng, init_partition=state.partition)
    smp.u = state.u
    smp.reassign(order=np.array([i]))
    new = smp.partition
    params = [ConjClusterParams(r[:-1].copy(), float(r[-1])) for r in smp.draw_params()]
    return ChainState(new, params, state.u)


def run_chain_conjugate(data: RegressionData, config: ConjugateConfig, rng=None,
                        init_partition=None) -> TraceStore:
    """Full sampler; returns the retained draws (iterations after burn-in, thinned)."""
    rng = np.random.default_rng(rng)
    config.validate(data.p)
    p = data.p
    trace = TraceStore(n=data.n, param_names=tuple([f"beta{r}" for r in range(p)] + ["sigma2"]))
    trace.meta.update(model="conjugate_regression", kappa=config.ngg.kappa, sigma=config.ngg.sigma,
                      family=config.similarity.family.value, lam=config.similarity.lam,
                      alpha=config.similarity.alpha, n_iter=config.n_iter, n_burnin=config.n_burnin,
                      thin=config.thin)
    if config.n_iter == 0:
        return trace
    smp = ConjugateSampler(data, config, rng, init_partition)
    for it in range(config.n_iter):
        keep = it >= config.n_burnin and (it - config.n_burnin) % config.thin == 0
        smp.sweep(adapt=it < config.n_burnin, record=trace if keep else None)
    trace.meta["u_proposal_sd"] = repr(smp.adapter.sd)
    return trace


def predict_new_regression(trace: TraceStore, x_new, data: RegressionData, ngg: NggParams,
                           sim: SimilarityConfig, cov_new=None, rng=None, prior=None):
    """Posterior predictive draws of y at a new design row, one per retained iteration.

    The new item joins block j with weight (n_j - sigma) g-ratio_j, or a new
    block with weight kappa (1+u)^sigma, using its covariates in the similarity.
    Returns ``(draws, mean)``, where ``mean`` averages the conditional means.
    """
    rng = np.random.default_rng(rng)
    x_new = np.asarray(x_new, dtype=float)
    prior = prior or ConjPriorConfig.isotropic(data.p)
    use_sim = not sim.is_constant
    if use_sim:
        X = data.covariates
        zc, zb = cov_new
        znew = X.whiten(np.atleast_2d(np.asarray(zc, dtype=float)))[0] if X.m_c else np.zeros(0)
        bnew = np.asarray(zb, dtype=np.int64).reshape(-1)
        Z, B = X.whitened, np.ascontiguousarray(X.binary, dtype=np.int64)
        wc, wb = X.weights
    draws = np.empty(len(trace))
    means = np.empty(len(trace))
    for g, (alloc, u, th) in enumerate(zip(trace.allocations, trace.u, trace.params)):
        k = th.shape[0]
        sizes = np.bincount(alloc, minlength=k)
        lw = np.empty(k + 1)
        lw[:k] = np.log(sizes - ngg.sigma)
        if use_sim:
            lw[:k] += K.log_sim_ratios_new_item(alloc, k, Z, B, znew, bnew, sim.family.code, sim.lam,
                                                sim.alpha, wc, wb, 1e-9, 10_000)
        lw[k] = math.log(ngg.kappa) + ngg.sigma * math.log1p(u)
        w = np.exp(lw - lw.max())
        j = rng.choice(k + 1, p=w / w.sum())
        if j < k:
            beta, s2 = th[j, :-1], th[j, -1]
        else:
            drawn = update_cluster_params(SufficientStats.empty(data.p), prior, rng)
            beta, s2 = drawn.beta, drawn.sigma2
        means[g] = x_new @ beta
        draws[g] = means[g] + math.sqrt(s2) * rng.standard_normal()
    return draws, float(means.mean()) if len(means) else float("nan")


def cv_fit_predict(train: RegressionData, test: RegressionData, config: ConjugateConfig, rng):
    """Fit on ``train`` and return (predictive means, responses) for ``test``.

    Test covariates enter the similarity through the training metric context.
    """
    tr = run_chain_conjugate(train, config, rng)
    preds = np.empty(test.n)
    for i in range(test.n):
        cov_new = None if test.covariates is None else test.covariates.row(i)
        _, preds[i] = predict_new_regression(tr, test.X[i], train, config.ngg, config.similarity,
                                             cov_new, rng, config.prior)
    return preds, test.y
