"""Independent closed forms for the recurrent full conditionals, assembled with plain loops."""
import math

import numpy as np
from scipy import stats

from ppmx_mixt.core import MixedCovariateMatrix, RecurrentDataset, RegressionState
from ppmx_mixt.recurrent import (RecPriorConfig, RecurrentState, impute_censored, update_beta0, update_beta_t,
                                 update_eta, update_rec_cluster_params, update_xi2)


def frozen_state(seed, n=7, p1=2, p2=1, k=2, strict=False):
    r = np.random.default_rng(seed)
    m = r.integers(1, 4, n)
    ys = [r.normal(0.5, 1.0, mi) for mi in m]
    bounds = r.normal(0.0, 0.7, n)
    xf = r.normal(size=(n, p1))
    xt = [r.normal(size=(mi + 1, p2)) for mi in m]
    cov = MixedCovariateMatrix.from_arrays(r.normal(size=(n, 1)), (r.random((n, 1)) < 0.5).astype(int))
    data = RecurrentDataset.from_lists(ys, bounds, xf, xt, cov)
    prior = RecPriorConfig(alpha0=0.2, psi0=-0.3, kappa0=2.0, kappa1=3.0, a=3.0, b=1.5,
                           Sigma0=np.diag(r.uniform(0.5, 2.0, p1)), nu0=3.0, gamma0=0.8, strict_shape=strict)
    alloc = np.arange(n) % k
    th = np.column_stack([r.normal(size=k), r.normal(size=k), r.uniform(0.4, 1.5, k)])
    eta = np.abs(r.normal(size=(n, data.J)))
    eta[np.arange(data.J)[None, :] > m[:, None]] = 0.0
    ycens = bounds + r.exponential(size=n)
    reg = RegressionState(r.normal(size=p1), r.normal(size=(data.J, p2)), r.uniform(0.5, 2.0, p2))
    return RecurrentState(data, prior, alloc, th, 0.5, eta, ycens, reg)


def _full_y(st, i, t):
    d = st.data
    return st.ycens[i] if t == d.m[i] else d.y[i, t]


def _offset(st, i, t):
    d = st.data
    v = 0.0
    if d.p1:
        v += d.x_fixed[i] @ st.reg.beta0
    if d.p2:
        v += d.x_time[i, t] @ st.reg.beta_t[t]
    return v


def eta_moments(st):
    """{(i, t): (mean, var)} of each latent's truncated normal."""
    out = {}
    for i in range(st.data.n):
        a, p, s2 = st.th[st.alloc[i]]
        for t in range(st.data.m[i] + 1):
            r = _full_y(st, i, t) - a - _offset(st, i, t)
            mu, sd = p * r / (s2 + p * p), math.sqrt(s2 / (s2 + p * p))
            dist = stats.truncnorm((0 - mu) / sd, np.inf, loc=mu, scale=sd)
            out[i, t] = dist.mean(), dist.var()
    return out


def censored_moments(st):
    out = {}
    d = st.data
    for i in range(d.n):
        a, p, s2 = st.th[st.alloc[i]]
        t = d.m[i]
        mu = a + _offset(st, i, t) + p * st.eta[i, t]
        sd = math.sqrt(s2)
        dist = stats.truncnorm((d.censor_bound[i] - mu) / sd, np.inf, loc=mu, scale=sd)
        out[i] = dist.mean(), dist.var()
    return out


def beta0_moments(st):
    d = st.data
    prec = np.linalg.inv(st.prior.sigma0(d.p1)).copy()
    h = np.zeros(d.p1)
    for i in range(d.n):
        a, p, s2 = st.th[st.alloc[i]]
        for t in range(d.m[i] + 1):
            prec += np.outer(d.x_fixed[i], d.x_fixed[i]) / s2
            tv = d.x_time[i, t] @ st.reg.beta_t[t] if d.p2 else 0.0
            h += d.x_fixed[i] * (_full_y(st, i, t) - a - tv - p * st.eta[i, t]) / s2
    cov = np.linalg.inv(prec)
    return cov @ h, cov


def beta_t_moments(st, t):
    d = st.data
    prec = np.diag(1.0 / st.reg.xi2)
    h = np.zeros(d.p2)
    for i in range(d.n):
        if d.m[i] + 1 <= t:
            continue
        a, p, s2 = st.th[st.alloc[i]]
        z = d.x_time[i, t]
        prec = prec + np.outer(z, z) / s2
        fx = d.x_fixed[i] @ st.reg.beta0 if d.p1 else 0.0
        h = h + z * (_full_y(st, i, t) - a - fx - p * st.eta[i, t]) / s2
    cov = np.linalg.inv(prec)
    return cov @ h, cov


def xi2_shape_scale(st):
    bt = st.reg.beta_t
    return st.prior.nu0 + bt.shape[0] / 2.0, st.prior.gamma0 + 0.5 * (bt ** 2).sum(0)


def ig_moments(shape, scale):
    mean = scale / (shape - 1)
    return mean, mean ** 2 / (shape - 2)


def cluster_moments(st, j):
    """(theta, K, a_tilde, b_tilde) of block j."""
    pr, d = st.prior, st.data
    D = np.diag([1 / pr.kappa0, 1 / pr.kappa1])
    th0 = np.array([pr.alpha0, pr.psi0])
    Kinv = D.copy()
    h = D @ th0
    syy, count, nj = 0.0, 0, 0
    for i in range(d.n):
        if st.alloc[i] != j:
            continue
        nj += 1
        for t in range(d.m[i] + 1):
            z = np.array([1.0, st.eta[i, t]])
            yh = _full_y(st, i, t) - _offset(st, i, t)
            Kinv += np.outer(z, z)
            h += z * yh
            syy += yh * yh
            count += 1
    theta = np.linalg.solve(Kinv, h)
    a_t = pr.a + 0.5 * (nj if pr.strict_shape else count)
    b_t = pr.b + 0.5 * (syy + th0 @ D @ th0 - theta @ Kinv @ theta)
    return theta, np.linalg.inv(Kinv), a_t, b_t


def _within(draws, mean, var, z=3.0):
    """Mean and variance of draws (N x d) against targets, per coordinate, within z standard errors."""
    draws = np.asarray(draws, dtype=float).reshape(len(draws), -1)
    mean, var = np.atleast_1d(mean), np.atleast_1d(var)
    N = len(draws)
    c = draws - draws.mean(0)
    se_m = draws.std(0) / math.sqrt(N)
    m4 = (c ** 4).mean(0)
    se_v = np.sqrt(np.maximum(m4 - c.var(0) ** 2, 1e-300) / N)
    return bool(np.all(np.abs(draws.mean(0) - mean) < z * se_m) and np.all(np.abs(c.var(0) - var) < z * se_v))


def moment_suite(st, rng, n_draws=100_000):
    """Run every update op n_draws times at the frozen state; return {op: passed}."""
    d = st.data
    res = {}
    mask = st.mask.copy()
    em = eta_moments(st)
    keys = sorted(em)
    draws = np.empty((n_draws, len(keys)))
    rows, cols = np.array([k[0] for k in keys]), np.array([k[1] for k in keys])
    for g in range(n_draws):
        draws[g] = update_eta(st, rng)[rows, cols]
    res["eta"] = _within(draws, [em[k][0] for k in keys], [em[k][1] for k in keys])
    assert np.all(draws >= 0) and np.all(st.eta[~mask] == 0)
    eta_saved = st.eta.copy()

    st.eta = eta_saved
    cm = censored_moments(st)
    draws = np.array([impute_censored(st, rng).copy() for _ in range(n_draws)])
    res["censored"] = _within(draws, [cm[i][0] for i in range(d.n)], [cm[i][1] for i in range(d.n)])
    assert np.all(draws >= d.censor_bound)
    st.ycens = draws[-1]

    mean, cov = beta0_moments(st)
    draws = np.array([update_beta0(st, rng).copy() for _ in range(n_draws)])
    ok = _within(draws, mean, np.diag(cov))
    # cross covariance of the first two coordinates
    if d.p1 > 1:
        prod = (draws[:, 0] - mean[0]) * (draws[:, 1] - mean[1])
        ok &= abs(prod.mean() - cov[0, 1]) < 3 * prod.std() / math.sqrt(n_draws)
    res["beta0"] = ok

    targets = [beta_t_moments(st, t) for t in range(d.J)]
    draws = np.array([update_beta_t(st, rng).copy() for _ in range(n_draws)])
    res["beta_t"] = all(_within(draws[:, t, :], targets[t][0], np.diag(targets[t][1])) for t in range(d.J))

    shape, scale = xi2_shape_scale(st)
    mean, var = ig_moments(shape, scale)
    draws = np.array([update_xi2(st, rng).copy() for _ in range(n_draws)])
    res["xi2"] = _within(draws, mean, var) and bool(np.all(draws > 0))

    tgt = [cluster_moments(st, j) for j in range(st.k)]
    draws = np.array([update_rec_cluster_params(st, rng).copy() for _ in range(n_draws)])
    ok = True
    for j, (theta, Kmat, a_t, b_t) in enumerate(tgt):
        s2_mean, s2_var = ig_moments(a_t, b_t)
        ok &= _within(draws[:, j, 2], s2_mean, s2_var)
        ok &= _within(draws[:, j, :2], theta, s2_mean * np.diag(Kmat))
    res["cluster"] = bool(ok)
    return res
