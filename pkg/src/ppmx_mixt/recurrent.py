"""Gibbs sampler for skew-normal recurrent gap times with administrative censoring.

For subject i in block j and occasion t = 1..m_i+1 (the last one censored),

    Y_it = alpha_j + x_i' beta0 + x_it' beta_t + psi_j eta_it + eps_it,
    eta_it ~ N+(0, 1),  eps_it ~ N(0, sigma2_j).

Block parameters have the conjugate base measure
(alpha_j, psi_j) | sigma2_j ~ N2((alpha0, psi0), sigma2_j diag(kappa0, kappa1)),
sigma2_j ~ IG(a, b). Partition updates use Neal's Algorithm 8 with a re-used
pool of R auxiliary parameter triples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri
from scipy.stats import skewnorm

from . import _kernels as K
from .cohesion import UScaleAdapter, _BlockState, _seed, initial_u
from .core import (ChainState, MixedCovariateMatrix, NggParams, Partition, RecClusterParams,
                   RecurrentDataset, RegressionState, SimilarityConfig)
from .errors import ConfigError, DimensionMismatch
from .trace import TraceStore

LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class RecPriorConfig:
    alpha0: float = 0.0
    psi0: float = 0.0
    kappa0: float = 10.0
    kappa1: float = 10.0
    a: float = 2.0
    b: float = 1.0
    Sigma0: np.ndarray | None = None
    nu0: float = 2.0
    gamma0: float = 1.0
    R: int = 5
    strict_shape: bool = False

    def __post_init__(self):
        for name in ("kappa0", "kappa1", "a", "b", "nu0", "gamma0"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"rec.{name} must be positive")
        if int(self.R) < 1:
            raise ConfigError("rec.R must be >= 1")
        if self.Sigma0 is not None:
            S = np.atleast_2d(np.asarray(self.Sigma0, dtype=float))
            if not np.allclose(S, S.T) or np.any(np.linalg.eigvalsh(S) <= 0):
                raise ConfigError("rec.Sigma0 must be symmetric positive-definite")
            object.__setattr__(self, "Sigma0", S)

    def sigma0(self, p1) -> np.ndarray:
        if self.Sigma0 is None:
            return np.eye(p1)
        if self.Sigma0.shape != (p1, p1):
            raise ConfigError("rec.Sigma0 does not match the number of fixed-time covariates")
        return self.Sigma0


# ---------------------------------------------------------------------------
# densities and truncated normals


def skew_normal_logpdf(y, loc, psi, sigma2):
    """log density of loc + psi*|Z1| + sqrt(sigma2)*Z2 (Z1, Z2 standard normal)."""
    y, loc, psi, sigma2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (y, loc, psi, sigma2)))
    om2 = sigma2 + psi ** 2
    z = (y - loc) / np.sqrt(om2)
    slant = psi / np.sqrt(sigma2)
    out = math.log(2.0) - 0.5 * np.log(om2) - 0.5 * (LOG_2PI + z * z) + log_ndtr(slant * z)
    return out[()] if out.ndim == 0 else out


def skew_normal_logsf(y, loc, psi, sigma2):
    """log P(Y > y) for the same skew-normal law."""
    om = np.sqrt(np.asarray(sigma2, dtype=float) + np.asarray(psi, dtype=float) ** 2)
    a = np.asarray(psi, dtype=float) / np.sqrt(sigma2)
    return skewnorm.logsf(y, a, loc=loc, scale=om)


def _tn_standard_lower(alpha, rng):
    """Draws of Z ~ N(0,1) conditioned on Z > alpha, elementwise."""
    alpha = np.asarray(alpha, dtype=float)
    out = np.empty(alpha.shape)
    mod = alpha <= 5.0
    if mod.any():
        u = rng.random(np.count_nonzero(mod))
        # upper-tail inverse cdf keeps precision for alpha > 0
        out[mod] = -ndtri(u * ndtr(-alpha[mod]))
    tail = np.flatnonzero(~mod)
    a = alpha.ravel()
    flat = out.ravel()
    while tail.size:
        lam = 0.5 * (a[tail] + np.sqrt(a[tail] ** 2 + 4.0))
        z = a[tail] + rng.exponential(size=tail.size) / lam
        ok = rng.random(tail.size) <= np.exp(-0.5 * (z - lam) ** 2)
        flat[tail[ok]] = z[ok]
        tail = tail[~ok]
    return flat.reshape(alpha.shape)


def rtruncnorm_lower(mean, sd, lower, rng):
    """N(mean, sd^2) truncated to (lower, inf)."""
    mean, sd, lower = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (mean, sd, lower)))
    return mean + sd * _tn_standard_lower((lower - mean) / sd, rng)


# ---------------------------------------------------------------------------
# state


@dataclass
class RecurrentConfig:
    ngg: NggParams = field(default_factory=lambda: NggParams(0.5, 0.15))
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    prior: RecPriorConfig = field(default_factory=RecPriorConfig)
    n_iter: int = 1000
    n_burnin: int = 500
    thin: int = 1
    init: str = "one"
    u_proposal_sd: float | None = None

    def validate(self):
        if self.n_iter < 0 or self.n_burnin < 0 or self.n_burnin > self.n_iter:
            raise ConfigError("need 0 <= sampler.n_burnin <= sampler.n_iter")
        if self.thin < 1:
            raise ConfigError("sampler.thin must be >= 1")
        if self.init not in ("singletons", "one"):
            raise ConfigError(f"sampler.init: unknown value {self.init!r}")
        if self.u_proposal_sd is not None and not self.u_proposal_sd > 0:
            raise ConfigError("sampler.u_proposal_sd must be positive")


class RecurrentState:
    """Mutable chain state; arrays are padded to J occasions per subject."""

    def __init__(self, data: RecurrentDataset, prior: RecPriorConfig, alloc, th, u, eta, ycens, reg):
        self.data = data
        self.prior = prior
        self.alloc = np.asarray(alloc, dtype=np.int64)
        self.th = np.asarray(th, dtype=float).reshape(-1, 3)
        self.u = float(u)
        self.eta = np.asarray(eta, dtype=float)
        self.ycens = np.asarray(ycens, dtype=float)
        self.reg = reg
        n, J = data.n, data.J
        self.T = data.m + 1
        self.mask = np.arange(J)[None, :] < self.T[:, None]
        self.cens_col = data.m

    @property
    def k(self) -> int:
        return self.th.shape[0]

    @property
    def Y(self) -> np.ndarray:
        """Responses with the censored column filled by the current imputation (zeros past T_i)."""
        Y = np.where(self.mask, np.nan_to_num(self.data.y), 0.0)
        Y[np.arange(self.data.n), self.cens_col] = self.ycens
        return Y

    def offset(self) -> np.ndarray:
        """x_i' beta0 + x_it' beta_t, padded entries zero."""
        d = self.data
        off = np.zeros((d.n, d.J))
        if d.p1:
            off += (d.x_fixed @ self.reg.beta0)[:, None]
        if d.p2:
            off += np.einsum("ntp,tp->nt", d.x_time, self.reg.beta_t)
        return np.where(self.mask, off, 0.0)

    def cluster_cols(self):
        a = self.th[self.alloc, 0][:, None]
        p = self.th[self.alloc, 1][:, None]
        s2 = self.th[self.alloc, 2][:, None]
        return a, p, s2

    def to_chain_state(self) -> ChainState:
        params = [RecClusterParams(*map(float, r)) for r in self.th]
        return ChainState(Partition(self.alloc), params, self.u, self.eta.copy(), self.ycens.copy(),
                          RegressionState(self.reg.beta0.copy(), self.reg.beta_t.copy(), self.reg.xi2.copy()))


def update_eta(state: RecurrentState, rng):
    """Truncated-normal redraw of every latent eta_it (t up to the censored occasion)."""
    a, p, s2 = state.cluster_cols()
    r = state.Y - a - state.offset()
    den = s2 + p ** 2
    mean = p * r / den
    sd = np.sqrt(s2 / den)
    eta = rtruncnorm_lower(mean, np.broadcast_to(sd, mean.shape), 0.0, rng)
    state.eta = np.where(state.mask, eta, 0.0)
    return state.eta


def impute_censored(state: RecurrentState, rng):
    """Redraw the censored log gap of each subject above its censoring bound."""
    d = state.data
    idx = np.arange(d.n)
    a, p, s2 = (v[:, 0] for v in state.cluster_cols())
    mean = a + state.offset()[idx, state.cens_col] + p * state.eta[idx, state.cens_col]
    state.ycens = rtruncnorm_lower(mean, np.sqrt(s2), d.censor_bound, rng)
    return state.ycens


def _mvn_from_precision(P, h, rng):
    L = np.linalg.cholesky(P)
    mean = np.linalg.solve(L.T, np.linalg.solve(L, h))
    return mean + np.linalg.solve(L.T, rng.standard_normal(len(h)))


def beta0_conditional(state: RecurrentState):
    """(precision, linear term) of the fixed-time coefficients' Gaussian full conditional."""
    d = state.data
    a, p, s2 = state.cluster_cols()
    w = state.T / s2[:, 0]
    prec = np.linalg.inv(state.prior.sigma0(d.p1)) + (d.x_fixed * w[:, None]).T @ d.x_fixed
    tv = np.einsum("ntp,tp->nt", d.x_time, state.reg.beta_t) if d.p2 else 0.0
    r = np.where(state.mask, state.Y - a - tv - p * state.eta, 0.0).sum(1) / s2[:, 0]
    return prec, d.x_fixed.T @ r


def update_beta0(state: RecurrentState, rng):
    d = state.data
    if d.p1 == 0:
        return state.reg.beta0
    prec, h = beta0_conditional(state)
    state.reg.beta0 = _mvn_from_precision(prec, h, rng)
    return state.reg.beta0


def beta_t_conditional(state: RecurrentState, t):
    """(precision, linear term) for occasion column t (0-based)."""
    d = state.data
    a, p, s2 = state.cluster_cols()
    rows = state.mask[:, t]
    X = d.x_time[rows, t, :]
    w = 1.0 / s2[rows, 0]
    prec = np.diag(1.0 / state.reg.xi2) + (X * w[:, None]).T @ X
    fixed = d.x_fixed[rows] @ state.reg.beta0 if d.p1 else 0.0
    r = (state.Y[rows, t] - a[rows, 0] - fixed - p[rows, 0] * state.eta[rows, t]) * w
    return prec, X.T @ r


def update_beta_t(state: RecurrentState, rng):
    d = state.data
    if d.p2 == 0:
        return state.reg.beta_t
    out = np.empty((d.J, d.p2))
    for t in range(d.J):
        prec, h = beta_t_conditional(state, t)
        out[t] = _mvn_from_precision(prec, h, rng)
    state.reg.beta_t = out
    return out


def update_xi2(state: RecurrentState, rng):
    bt = state.reg.beta_t
    if bt.size == 0:
        return state.reg.xi2
    pr = state.prior
    shape = pr.nu0 + bt.shape[0] / 2.0
    scale = pr.gamma0 + 0.5 * (bt ** 2).sum(0)
    state.reg.xi2 = scale / rng.gamma(shape, size=bt.shape[1])
    return state.reg.xi2


def cluster_conditional(state: RecurrentState):
    """Per-block NIG posterior pieces (K_inv, theta, a_tilde, b_tilde)."""
    pr = state.prior
    k = state.k
    yhat = np.where(state.mask, state.Y - state.offset(), 0.0)
    eta = np.where(state.mask, state.eta, 0.0)
    s = state.alloc
    cnt = np.bincount(s, weights=state.T, minlength=k)
    se = np.bincount(s, weights=eta.sum(1), minlength=k)
    see = np.bincount(s, weights=(eta ** 2).sum(1), minlength=k)
    sy = np.bincount(s, weights=yhat.sum(1), minlength=k)
    sye = np.bincount(s, weights=(yhat * eta).sum(1), minlength=k)
    syy = np.bincount(s, weights=(yhat ** 2).sum(1), minlength=k)
    D = np.array([1.0 / pr.kappa0, 1.0 / pr.kappa1])
    th0 = np.array([pr.alpha0, pr.psi0])
    Kinv = np.empty((k, 2, 2))
    Kinv[:, 0, 0] = cnt + D[0]
    Kinv[:, 0, 1] = Kinv[:, 1, 0] = se
    Kinv[:, 1, 1] = see + D[1]
    h = np.column_stack([sy, sye]) + D * th0
    theta = np.linalg.solve(Kinv, h[..., None])[..., 0]
    nj = np.bincount(s, minlength=k)
    a_t = pr.a + 0.5 * (nj if pr.strict_shape else cnt)
    b_t = pr.b + 0.5 * (syy + th0 @ (D * th0) - np.einsum("kr,kr->k", theta, h))
    return Kinv, theta, a_t, b_t


def update_rec_cluster_params(state: RecurrentState, rng):
    Kinv, theta, a_t, b_t = cluster_conditional(state)
    s2 = b_t / rng.gamma(a_t)
    L = np.linalg.cholesky(Kinv)
    z = rng.standard_normal((state.k, 2))
    # L L' = K^-1, so L'^-1 z has covariance K
    dev = np.linalg.solve(np.swapaxes(L, 1, 2), z[..., None])[..., 0]
    ab = theta + np.sqrt(s2)[:, None] * dev
    state.th = np.column_stack([ab, s2])
    return state.th


def subject_loglik(state: RecurrentState) -> np.ndarray:
    """Per-subject log density of the observed data with eta integrated out.

    Observed gaps enter through the skew-normal density; the censored gap
    through its survival function at the censoring bound.
    """
    d = state.data
    a, p, s2 = state.cluster_cols()
    loc = a + state.offset()
    obs = np.arange(d.J)[None, :] < d.m[:, None]
    lp = skew_normal_logpdf(np.nan_to_num(d.y), loc, p, s2)
    tot = np.where(obs, lp, 0.0).sum(1)
    idx = np.arange(d.n)
    tot += skew_normal_logsf(d.censor_bound, loc[idx, state.cens_col], p[:, 0], s2[:, 0])
    return tot


class RecurrentSampler:
    def __init__(self, data: RecurrentDataset, config: RecurrentConfig, rng, init_partition=None):
        config.validate()
        self.data = data
        self.cfg = config
        self.rng = rng
        pr = config.prior
        n = data.n
        if init_partition is not None:
            labels = init_partition.allocations if isinstance(init_partition, Partition) else init_partition
            alloc = Partition.from_labels(labels).allocations.copy()
        elif config.init == "singletons":
            alloc = np.arange(n, dtype=np.int64)
        else:
            alloc = np.zeros(n, dtype=np.int64)
        sim = config.similarity
        if not sim.is_constant and data.covariates is None:
            raise ConfigError("a similarity other than ONE needs covariates")
        self.blocks = _BlockState(alloc, data.covariates if not sim.is_constant else None, sim)
        k = self.blocks.k
        reg = RegressionState(np.zeros(data.p1), np.zeros((data.J, data.p2)), np.ones(data.p2))
        eta = np.abs(rng.standard_normal((n, data.J)))
        ycens = data.censor_bound + math.log(2.0)
        th = np.tile([pr.alpha0, pr.psi0, 1.0], (k, 1))
        u0, sd0 = initial_u(n, k, config.ngg)
        self.state = RecurrentState(data, pr, self.blocks.s, th, u0, eta, ycens, reg)
        self.state.eta = np.where(self.state.mask, eta, 0.0)
        update_rec_cluster_params(self.state, rng)
        self.adapter = UScaleAdapter(config.u_proposal_sd or sd0)
        self._cap = n + 1
        self.aux = np.zeros((3, pr.R))

    def reassign(self):
        st, b, pr = self.state, self.blocks, self.cfg.prior
        ngg = self.cfg.ngg
        th = np.zeros((self._cap, 3))
        th[: st.k] = st.th
        th_a, th_p, th_s = (np.ascontiguousarray(th[:, c]) for c in range(3))
        aux_a, aux_p, aux_s = (np.zeros(pr.R) for _ in range(3))
        Y = np.ascontiguousarray(st.Y)
        off = np.ascontiguousarray(st.offset())
        eta = np.ascontiguousarray(st.eta)
        T = np.ascontiguousarray(st.T, dtype=np.int64)
        order = self.rng.permutation(self.data.n).astype(np.int64)
        b.k = K.rec_reassign(order, b.s, b.k, b.sizes, b.members, b.pos, Y, off, eta, T,
                             th_a, th_p, th_s, aux_a, aux_p, aux_s, pr.alpha0, pr.psi0, pr.kappa0,
                             pr.kappa1, pr.a, pr.b, *b.sim_args(), st.u, ngg.kappa, ngg.sigma,
                             _seed(self.rng))
        st.alloc = b.s
        st.th = np.column_stack([th_a[: b.k], th_p[: b.k], th_s[: b.k]])

    def sample_u(self, adapt=False):
        st, ngg = self.state, self.cfg.ngg
        st.u, ok = K.u_update_seeded(st.u, self.data.n, st.k, ngg.kappa, ngg.sigma, self.adapter.sd,
                                     _seed(self.rng))
        if adapt and self.cfg.u_proposal_sd is None:
            self.adapter.update(bool(ok))

    def sweep(self, adapt=False):
        st, rng = self.state, self.rng
        update_eta(st, rng)
        impute_censored(st, rng)
        update_beta0(st, rng)
        update_beta_t(st, rng)
        update_xi2(st, rng)
        update_rec_cluster_params(st, rng)
        self.reassign()
        self.sample_u(adapt)

    def record(self, trace: TraceStore):
        st = self.state
        trace.append(st.alloc, st.u, st.th, subject_loglik(st), beta0=st.reg.beta0,
                     beta_t=st.reg.beta_t, xi2=st.reg.xi2, ycens=st.ycens)


def reassign_subject(i, state: RecurrentState, config: RecurrentConfig, rng) -> RecurrentState:
    """Algorithm-8 reassignment of one subject with a freshly drawn auxiliary pool."""
    smp = RecurrentSampler.__new__(RecurrentSampler)
    smp.data, smp.cfg, smp.rng, smp.state = state.data, config, rng, state
    smp._cap = state.data.n + 1
    sim = config.similarity
    smp.blocks = _BlockState(state.alloc, state.data.covariates if not sim.is_constant else None, sim)
    # reorder parameter rows to the canonical block labels used by the kernel
    canon = Partition.from_labels(state.alloc).allocations
    first = {}
    for old, new in zip(state.alloc, canon):
        first.setdefault(int(new), int(old))
    state.th = state.th[[first[j] for j in range(len(first))]]
    state.alloc = smp.blocks.s
    pr, b, ngg = config.prior, smp.blocks, config.ngg
    th = np.zeros((smp._cap, 3))
    th[: state.k] = state.th
    th_a, th_p, th_s = (np.ascontiguousarray(th[:, c]) for c in range(3))
    aux = [np.zeros(pr.R) for _ in range(3)]
    b.k = K.rec_reassign(np.array([i], dtype=np.int64), b.s, b.k, b.sizes, b.members, b.pos,
                         np.ascontiguousarray(state.Y), np.ascontiguousarray(state.offset()),
                         np.ascontiguousarray(state.eta), state.T.astype(np.int64), th_a, th_p, th_s,
                         *aux, pr.alpha0, pr.psi0, pr.kappa0, pr.kappa1, pr.a, pr.b, *b.sim_args(),
                         state.u, ngg.kappa, ngg.sigma, _seed(rng))
    state.alloc = b.s
    state.th = np.column_stack([th_a[: b.k], th_p[: b.k], th_s[: b.k]])
    return state


def run_chain_recurrent(data: RecurrentDataset, config: RecurrentConfig, rng=None,
                        init_partition=None) -> TraceStore:
    """Full sampler; one sweep runs eta, censored values, beta0, beta_t, xi2, block
    parameters, partition and u in that order."""
    rng = np.random.default_rng(rng)
    config.validate()
    trace = TraceStore(n=data.n, param_names=("alpha", "psi", "sigma2"))
    trace.meta.update(model="recurrent", kappa=config.ngg.kappa, sigma=config.ngg.sigma,
                      family=config.similarity.family.value, lam=config.similarity.lam,
                      alpha=config.similarity.alpha, n_iter=config.n_iter, n_burnin=config.n_burnin,
                      thin=config.thin, R=config.prior.R, strict_shape=config.prior.strict_shape)
    if config.n_iter == 0:
        return trace
    smp = RecurrentSampler(data, config, rng, init_partition)
    for it in range(config.n_iter):
        smp.sweep(adapt=it < config.n_burnin)
        if it >= config.n_burnin and (it - config.n_burnin) % config.thin == 0:
            smp.record(trace)
    trace.meta["u_proposal_sd"] = repr(smp.adapter.sd)
    return trace


# ---------------------------------------------------------------------------
# prediction


def predict_new_subject(trace: TraceStore, x_new, horizon: int, data: RecurrentDataset,
                        config: RecurrentConfig, rng=None):
    """Predictive draws of a new subject's first ``horizon`` log gap times.

    ``x_new`` is a dict with ``x_fixed`` (p1), ``x_time`` (horizon x p2) and,
    when the similarity is not constant, ``covariates`` = (continuous, binary).
    Each retained iteration allocates the new subject by cohesion and
    similarity alone and then draws from the skew-normal kernel of the chosen
    block (a fresh base-measure draw for a new block).
    Returns an array of shape ``(iterations, horizon)``.
    """
    rng = np.random.default_rng(rng)
    xf = np.asarray(x_new.get("x_fixed", np.zeros(data.p1)), dtype=float).reshape(-1)
    xt = np.asarray(x_new.get("x_time", np.zeros((horizon, data.p2))), dtype=float).reshape(horizon, -1)
    if xf.size != data.p1 or xt.shape[1] != data.p2:
        raise DimensionMismatch("new subject's covariates do not match the fitted model")
    sim, ngg, pr = config.similarity, config.ngg, config.prior
    use_sim = not sim.is_constant
    if use_sim:
        X = data.covariates
        zc, zb = x_new["covariates"]
        znew = X.whiten(np.atleast_2d(np.asarray(zc, dtype=float)))[0] if X.m_c else np.zeros(0)
        bnew = np.asarray(zb, dtype=np.int64).reshape(-1)
        if bnew.size != X.m_b:
            raise DimensionMismatch("binary covariates of the new subject have the wrong length")
        Z, B = X.whitened, np.ascontiguousarray(X.binary, dtype=np.int64)
        wc, wb = X.weights
    G = len(trace)
    out = np.empty((G, horizon))
    beta0 = trace.extra("beta0") if data.p1 else None
    beta_t = trace.extra("beta_t") if data.p2 else None
    for g in range(G):
        alloc, u, th = trace.allocations[g], trace.u[g], trace.params[g]
        k = th.shape[0]
        lw = np.empty(k + 1)
        lw[:k] = np.log(np.bincount(alloc, minlength=k) - ngg.sigma)
        if use_sim:
            lw[:k] += K.log_sim_ratios_new_item(alloc, k, Z, B, znew, bnew, sim.family.code, sim.lam,
                                                sim.alpha, wc, wb, 1e-9, 10_000)
        lw[k] = math.log(ngg.kappa) + ngg.sigma * math.log1p(u)
        w = np.exp(lw - lw.max())
        w /= w.sum()
        j = rng.choice(k + 1, p=w)
        if j < k:
            a, p, s2 = th[j]
        else:
            s2 = 1.0 / rng.gamma(pr.a, 1.0 / pr.b)
            a = pr.alpha0 + math.sqrt(s2 * pr.kappa0) * rng.standard_normal()
            p = pr.psi0 + math.sqrt(s2 * pr.kappa1) * rng.standard_normal()
        off = np.zeros(horizon)
        if data.p1:
            off += xf @ beta0[g]
        if data.p2:
            bt = beta_t[g].reshape(data.J, data.p2)
            if horizon > data.J:
                # occasions never seen in training: coefficients from their prior
                xi2 = trace.extra("xi2")[g]
                extra = np.sqrt(xi2) * rng.standard_normal((horizon - data.J, data.p2))
                bt = np.vstack([bt, extra])
            off += np.einsum("tp,tp->t", xt, bt[:horizon])
        eta = np.abs(rng.standard_normal(horizon))
        out[g] = a + off + p * eta + math.sqrt(s2) * rng.standard_normal(horizon)
    return out


def cv_fit_predict(train: RecurrentDataset, test: RecurrentDataset, config: RecurrentConfig, rng):
    """Fit on ``train``; predict each test subject's observed log gaps by predictive means."""
    tr = run_chain_recurrent(train, config, rng)
    preds, truth = [], []
    for i in range(test.n):
        m = int(test.m[i])
        x_new = {"x_fixed": test.x_fixed[i], "x_time": test.x_time[i, :m]}
        if not config.similarity.is_constant:
            x_new["covariates"] = test.covariates.row(i)
        draws = predict_new_subject(tr, x_new, m, train, config, rng)
        preds.append(draws.mean(0))
        truth.append(test.observed(i))
    return np.concatenate(preds), np.concatenate(truth)
