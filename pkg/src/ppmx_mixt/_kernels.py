"""Compiled inner loops shared by the samplers.

Randomness inside kernels comes from numba's own generator, reseeded on
every call from a seed drawn off the caller's ``numpy.random.Generator``;
that keeps runs reproducible from one root seed.

Block bookkeeping arrays (all sized for ``kmax`` blocks):
  s[n]            block label per item, contiguous 0..k-1
  sizes[kmax]     block sizes
  members[kmax,n] member lists (first sizes[j] entries valid)
  pos[n]          position of item i inside members[s[i]]
Similarity cache:
  cent[kmax,mc]   whitened continuous centroid
  dc[kmax]        sum of whitened distances to the centroid
  ones[kmax,mb]   count of ones per binary column
  dtot[kmax]      block compactness D
"""
import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)
FAM_ONE, FAM_GA, FAM_GB, FAM_GC = 0, 1, 2, 3
COINCIDE = 1e-12


@njit(cache=True)
def seed(s):
    np.random.seed(s)


# ---------------------------------------------------------------------------
# geometric median / compactness


@njit(cache=True)
def _vertex_is_optimal(Z, idx, cnt, extra, v):
    """Optimality test for a data point ``v`` as geometric median."""
    mc = Z.shape[1]
    R = np.zeros(mc)
    mult = 0
    m = cnt + (1 if extra >= 0 else 0)
    for a in range(m):
        p = idx[a] if a < cnt else extra
        d = 0.0
        for c in range(mc):
            d += (Z[p, c] - v[c]) ** 2
        d = math.sqrt(d)
        if d < COINCIDE:
            mult += 1
        else:
            for c in range(mc):
                R[c] += (Z[p, c] - v[c]) / d
    r = 0.0
    for c in range(mc):
        r += R[c] ** 2
    return math.sqrt(r) <= mult


@njit(cache=True)
def _newton_candidate(Z, idx, cnt, extra, m, c0, R, H, out):
    """c0 + H^-1 R with H = sum (I - e e') / d; False if H is numerically singular."""
    mc = c0.shape[0]
    H[:, :] = 0.0
    for a in range(m):
        p = idx[a] if a < cnt else extra
        d = 0.0
        for c in range(mc):
            d += (Z[p, c] - c0[c]) ** 2
        d = math.sqrt(d)
        w = 1.0 / d
        for r in range(mc):
            er = (Z[p, r] - c0[r]) * w
            H[r, r] += w
            for c in range(r + 1):
                H[r, c] -= er * (Z[p, c] - c0[c]) * w * w
    scale = 0.0
    for r in range(mc):
        scale += H[r, r]
    # in-place Cholesky of the lower triangle
    for r in range(mc):
        for c in range(r + 1):
            acc = H[r, c]
            for q in range(c):
                acc -= H[r, q] * H[c, q]
            if r == c:
                if acc <= 1e-14 * scale:
                    return False
                H[r, r] = math.sqrt(acc)
            else:
                H[r, c] = acc / H[c, c]
    for r in range(mc):
        acc = R[r]
        for q in range(r):
            acc -= H[r, q] * out[q]
        out[r] = acc / H[r, r]
    for r in range(mc - 1, -1, -1):
        acc = out[r]
        for q in range(r + 1, mc):
            acc -= H[q, r] * out[q]
        out[r] = acc / H[r, r]
    for c in range(mc):
        out[c] += c0[c]
    return True


@njit(cache=True)
def geomedian(Z, idx, cnt, extra, init, out, tol, maxit):
    """Geometric median of rows ``Z[idx[:cnt]]`` (plus row ``extra`` if >= 0).

    Writes the median into ``out`` and returns (sum of distances, iterations).
    Iterations equal to ``maxit`` signal non-convergence.
    """
    mc = Z.shape[1]
    m = cnt + (1 if extra >= 0 else 0)
    if mc == 0 or m == 0:
        return 0.0, 0
    if m == 1:
        p = idx[0] if cnt == 1 else extra
        for c in range(mc):
            out[c] = Z[p, c]
        return 0.0, 0
    if mc == 1:
        vals = np.empty(m)
        for a in range(m):
            vals[a] = Z[idx[a] if a < cnt else extra, 0]
        vals.sort()
        med = 0.5 * (vals[(m - 1) // 2] + vals[m // 2])
        out[0] = med
        D = 0.0
        for a in range(m):
            D += abs(vals[a] - med)
        return D, 0

    c0 = np.empty(mc)
    for c in range(mc):
        c0[c] = init[c]
    num = np.empty(mc)
    R = np.empty(mc)
    cn = np.empty(mc)
    nt = np.empty(mc)
    H = np.empty((mc, mc))
    it = 0
    while it < maxit:
        it += 1
        num[:] = 0.0
        R[:] = 0.0
        den = 0.0
        eta = 0
        dsum = 0.0
        dmin = np.inf
        amin = -1
        for a in range(m):
            p = idx[a] if a < cnt else extra
            d = 0.0
            for c in range(mc):
                d += (Z[p, c] - c0[c]) ** 2
            d = math.sqrt(d)
            dsum += d
            if d < dmin:
                dmin = d
                amin = p
            if d < COINCIDE:
                eta += 1
                continue
            w = 1.0 / d
            den += w
            for c in range(mc):
                num[c] += Z[p, c] * w
                R[c] += (Z[p, c] - c0[c]) * w
        if den == 0.0:
            break
        if eta == 0:
            # Weiszfeld crawls towards an optimal data point, so test the nearest one directly
            if dmin < 1e-6 * dsum / m or it % 16 == 0:
                if _vertex_is_optimal(Z, idx, cnt, extra, Z[amin]):
                    for c in range(mc):
                        c0[c] = Z[amin, c]
                    break
            for c in range(mc):
                cn[c] = num[c] / den
            # Newton step on the summed distance; kept only if it lowers the objective
            if _newton_candidate(Z, idx, cnt, extra, m, c0, R, H, nt):
                fn = 0.0
                for a in range(m):
                    p = idx[a] if a < cnt else extra
                    d = 0.0
                    for c in range(mc):
                        d += (Z[p, c] - nt[c]) ** 2
                    fn += math.sqrt(d)
                if fn < dsum:
                    for c in range(mc):
                        cn[c] = nt[c]
        else:
            r = 0.0
            for c in range(mc):
                r += R[c] ** 2
            r = math.sqrt(r)
            if r <= eta:
                break
            f = eta / r
            for c in range(mc):
                cn[c] = (1.0 - f) * num[c] / den + f * c0[c]
        step = 0.0
        for c in range(mc):
            step += (cn[c] - c0[c]) ** 2
            c0[c] = cn[c]
        if math.sqrt(step) < tol:
            break
    D = 0.0
    for a in range(m):
        p = idx[a] if a < cnt else extra
        d = 0.0
        for c in range(mc):
            d += (Z[p, c] - c0[c]) ** 2
        D += math.sqrt(d)
    for c in range(mc):
        out[c] = c0[c]
    return D, it


@njit(cache=True)
def mismatches(ones_row, size):
    """Hamming sum from members to the majority-vote binary centroid."""
    tot = 0
    for c in range(ones_row.shape[0]):
        o = ones_row[c]
        tot += o if o <= size - o else size - o
    return tot


@njit(cache=True)
def log_g(D, fam, lam, alpha):
    if fam == FAM_ONE or D <= 0.0:
        return 0.0
    t = lam * D
    if fam == FAM_GA:
        return -(t ** alpha)
    if fam == FAM_GB:
        return -alpha * math.log1p(t)
    return -t * math.log1p(t)


@njit(cache=True)
def block_compactness(Z, B, idx, cnt, extra, init, out, wc, wb, tol, maxit):
    """Compactness D of a block given as an index list (+ optional extra item)."""
    dc, it = geomedian(Z, idx, cnt, extra, init, out, tol, maxit)
    mb = B.shape[1]
    mism = 0
    m = cnt + (1 if extra >= 0 else 0)
    for c in range(mb):
        o = 0
        for a in range(m):
            o += B[idx[a] if a < cnt else extra, c]
        mism += o if o <= m - o else m - o
    return wc * dc + wb * mism, dc, it


@njit(cache=True)
def init_blocks(s, k, sizes, members, pos):
    sizes[:] = 0
    for i in range(s.shape[0]):
        j = s[i]
        members[j, sizes[j]] = i
        pos[i] = sizes[j]
        sizes[j] += 1


@njit(cache=True)
def init_sim_cache(k, sizes, members, Z, B, cent, dc, ones, dtot, wc, wb, tol, maxit):
    mc = Z.shape[1]
    for j in range(k):
        idx = members[j]
        cnt = sizes[j]
        init = np.zeros(mc)
        for a in range(cnt):
            for c in range(mc):
                init[c] += Z[idx[a], c] / cnt
        dc[j], _ = geomedian(Z, idx, cnt, -1, init, cent[j], tol, maxit)
        ones[j, :] = 0
        for a in range(cnt):
            for c in range(B.shape[1]):
                ones[j, c] += B[idx[a], c]
        dtot[j] = wc * dc[j] + wb * mismatches(ones[j], cnt)


@njit(cache=True)
def _detach(i, s, sizes, members, pos):
    j = s[i]
    p = pos[i]
    last = members[j, sizes[j] - 1]
    members[j, p] = last
    pos[last] = p
    sizes[j] -= 1
    return j


@njit(cache=True)
def _attach(i, j, s, sizes, members, pos):
    s[i] = j
    members[j, sizes[j]] = i
    pos[i] = sizes[j]
    sizes[j] += 1


@njit(cache=True)
def _move_block(src, dst, s, sizes, members, cent, dc, ones, dtot):
    """Relabel block ``src`` as ``dst`` (used to close the gap of a deleted block)."""
    cnt = sizes[src]
    for a in range(cnt):
        it = members[src, a]
        members[dst, a] = it
        s[it] = dst
    sizes[dst] = cnt
    sizes[src] = 0
    cent[dst, :] = cent[src, :]
    dc[dst] = dc[src]
    ones[dst, :] = ones[src, :]
    dtot[dst] = dtot[src]


# ---------------------------------------------------------------------------
# conjugate normal / normal-inverse-gamma marginal


@njit(cache=True)
def chol_logdet_quad(P, h, L, w):
    """Cholesky of SPD ``P``; returns (log det P, h' P^{-1} h)."""
    p = P.shape[0]
    for r in range(p):
        for c in range(r + 1):
            acc = P[r, c]
            for q in range(c):
                acc -= L[r, q] * L[c, q]
            if r == c:
                if acc <= 0.0:
                    return np.nan, np.nan
                L[r, r] = math.sqrt(acc)
            else:
                L[r, c] = acc / L[c, c]
    logdet = 0.0
    quad = 0.0
    for r in range(p):
        logdet += 2.0 * math.log(L[r, r])
        acc = h[r]
        for q in range(r):
            acc -= L[r, q] * w[q]
        w[r] = acc / L[r, r]
        quad += w[r] * w[r]
    return logdet, quad


@njit(cache=True)
def log_marginal_parts(P, h, yty, nn, q0, a0, b0, logdetP0, L, w):
    """log m for precision P = B0^-1 + X'X, h = B0^-1 mu0 + X'y."""
    if nn == 0:
        return 0.0
    logdet, quad = chol_logdet_quad(P, h, L, w)
    aj = a0 + 0.5 * nn
    bj = b0 + 0.5 * (yty + q0 - quad)
    if not bj > 0.0:
        return np.nan
    return (-0.5 * nn * LOG_2PI + 0.5 * (logdetP0 - logdet)
            + a0 * math.log(b0) - aj * math.log(bj) + math.lgamma(aj) - math.lgamma(a0))


@njit(cache=True)
def refresh_stats(s, k, X, y, XtX, Xty, yty):
    p = X.shape[1]
    for j in range(k):
        XtX[j, :, :] = 0.0
        Xty[j, :] = 0.0
        yty[j] = 0.0
    for i in range(s.shape[0]):
        j = s[i]
        for r in range(p):
            Xty[j, r] += X[i, r] * y[i]
            for c in range(p):
                XtX[j, r, c] += X[i, r] * X[i, c]
        yty[j] += y[i] * y[i]


@njit(cache=True)
def _block_logm(j, sizes, XtX, Xty, yty, P0, h0, q0, a0, b0, logdetP0, P, h, L, w):
    p = P0.shape[0]
    for r in range(p):
        h[r] = h0[r] + Xty[j, r]
        for c in range(p):
            P[r, c] = P0[r, c] + XtX[j, r, c]
    return log_marginal_parts(P, h, yty[j], sizes[j], q0, a0, b0, logdetP0, L, w)


@njit(cache=True)
def _block_logm_plus(j, xi, yi, sizes, XtX, Xty, yty, P0, h0, q0, a0, b0, logdetP0, P, h, L, w):
    p = P0.shape[0]
    nn = 1
    yy = yi * yi
    if j >= 0:
        nn += sizes[j]
        yy += yty[j]
    for r in range(p):
        h[r] = h0[r] + yi * xi[r]
        if j >= 0:
            h[r] += Xty[j, r]
        for c in range(p):
            P[r, c] = P0[r, c] + xi[r] * xi[c]
            if j >= 0:
                P[r, c] += XtX[j, r, c]
    return log_marginal_parts(P, h, yy, nn, q0, a0, b0, logdetP0, L, w)


# ---------------------------------------------------------------------------
# auxiliary variable u


@njit(cache=True)
def log_u_density(u, n, k, kappa, sigma):
    if not u > 0.0:
        return -np.inf
    l1 = math.log1p(u)
    if sigma == 0.0:
        psi = kappa * l1
    else:
        psi = kappa * math.expm1(sigma * l1) / sigma
    return (n - 1) * math.log(u) - (n - sigma * k) * l1 - psi


@njit(cache=True)
def _log_ndtr_pos(x):
    # x >= 0 here, so Phi(x) >= 1/2 and the direct form is accurate
    return math.log(0.5 * math.erfc(-x / math.sqrt(2.0)))


@njit(cache=True)
def u_mh_step(u, n, k, kappa, sigma, sd):
    """Metropolis-Hastings step with a Gaussian proposal truncated to (0, inf)."""
    while True:
        prop = u + sd * np.random.standard_normal()
        if prop > 0.0:
            break
    logr = (log_u_density(prop, n, k, kappa, sigma) - log_u_density(u, n, k, kappa, sigma)
            + _log_ndtr_pos(u / sd) - _log_ndtr_pos(prop / sd))
    if math.log(np.random.random()) < logr:
        return prop, True
    return u, False


@njit(cache=True)
def u_mh_step_seeded(u, n, k, kappa, sigma, sd, s):
    np.random.seed(s)
    return u_mh_step(u, n, k, kappa, sigma, sd)


LOG_U_SCALES = np.array([0.1, 0.5, 2.5])


@njit(cache=True)
def u_log_step(u, n, k, kappa, sigma):
    """Random-walk Metropolis step on log u with a randomly chosen scale.

    For small kappa the u conditional spreads over many orders of magnitude,
    which a proposal on the original scale cannot cross.
    """
    sd = LOG_U_SCALES[np.random.randint(0, LOG_U_SCALES.shape[0])]
    prop = u * math.exp(sd * np.random.standard_normal())
    if not (prop > 0.0 and prop < np.inf):
        return u
    logr = (log_u_density(prop, n, k, kappa, sigma) - log_u_density(u, n, k, kappa, sigma)
            + math.log(prop) - math.log(u))
    if math.log(np.random.random()) < logr:
        return prop
    return u


@njit(cache=True)
def u_update(u, n, k, kappa, sigma, sd):
    """Truncated-Gaussian step followed by a log-scale step; the flag is the first step's."""
    u, ok = u_mh_step(u, n, k, kappa, sigma, sd)
    return u_log_step(u, n, k, kappa, sigma), ok


@njit(cache=True)
def u_update_seeded(u, n, k, kappa, sigma, sd, s):
    np.random.seed(s)
    return u_update(u, n, k, kappa, sigma, sd)


# ---------------------------------------------------------------------------
# reassignment sweeps


@njit(cache=True)
def _categorical(lw, cnt):
    mx = -np.inf
    for a in range(cnt):
        if lw[a] > mx:
            mx = lw[a]
    tot = 0.0
    for a in range(cnt):
        lw[a] = math.exp(lw[a] - mx)
        tot += lw[a]
    r = np.random.random() * tot
    acc = 0.0
    for a in range(cnt):
        acc += lw[a]
        if r < acc:
            return a
    return cnt - 1


@njit(cache=True)
def _remove_sim(i, j0, sizes, members, Z, B, cent, dc, ones, dtot, wc, wb, tol, maxit):
    for c in range(B.shape[1]):
        ones[j0, c] -= B[i, c]
    if sizes[j0] > 0:
        dc[j0], _ = geomedian(Z, members[j0], sizes[j0], -1, cent[j0].copy(), cent[j0], tol, maxit)
        dtot[j0] = wc * dc[j0] + wb * mismatches(ones[j0], sizes[j0])


@njit(cache=True)
def _candidate_sim(i, j, sizes, members, Z, B, cent, ones, cand_cent, cand_dc, wc, wb, tol, maxit):
    dcj, _ = geomedian(Z, members[j], sizes[j], i, cent[j], cand_cent[j], tol, maxit)
    cand_dc[j] = dcj
    mism = 0
    nn = sizes[j] + 1
    for c in range(B.shape[1]):
        o = ones[j, c] + B[i, c]
        mism += o if o <= nn - o else nn - o
    return wc * dcj + wb * mism


@njit(cache=True)
def _add_sim(i, j, is_new, Z, B, cent, dc, ones, dtot, cand_cent, cand_dc, cand_d):
    if is_new:
        cent[j, :] = Z[i, :]
        dc[j] = 0.0
        ones[j, :] = B[i, :]
        dtot[j] = 0.0
    else:
        cent[j, :] = cand_cent[j, :]
        dc[j] = cand_dc[j]
        for c in range(B.shape[1]):
            ones[j, c] += B[i, c]
        dtot[j] = cand_d[j]


@njit(cache=True)
def conj_reassign(order, s, k, sizes, members, pos,
                  X, y, use_lik, XtX, Xty, yty, logm, P0, h0, q0, a0, b0, logdetP0,
                  Z, B, fam, lam, alpha, wc, wb, cent, dc, ones, dtot, tol, maxit,
                  u, kappa, sigma, rseed):
    """One pass of collapsed reassignment over ``order``; returns the new k.

    With ``use_lik`` false only cohesion and similarity enter, which samples
    the covariate-dependent partition prior itself.
    """
    np.random.seed(rseed)
    n = s.shape[0]
    p = X.shape[1]
    kmax = sizes.shape[0]
    mc = Z.shape[1]
    use_sim = fam != FAM_ONE
    P = np.empty((p, p))
    h = np.empty(p)
    L = np.zeros((p, p))
    w = np.empty(p)
    lw = np.empty(kmax + 1)
    cand_cent = np.empty((kmax, mc))
    cand_dc = np.empty(kmax)
    cand_d = np.empty(kmax)
    log1pu = math.log1p(u)
    log_new = math.log(kappa) + sigma * log1pu
    for oi in range(order.shape[0]):
        i = order[oi]
        xi = X[i]
        yi = y[i]
        j0 = _detach(i, s, sizes, members, pos)
        if use_lik:
            for r in range(p):
                Xty[j0, r] -= xi[r] * yi
                for c in range(p):
                    XtX[j0, r, c] -= xi[r] * xi[c]
            yty[j0] -= yi * yi
        if sizes[j0] == 0:
            last = k - 1
            if j0 != last:
                _move_block(last, j0, s, sizes, members, cent, dc, ones, dtot)
                if use_lik:
                    XtX[j0] = XtX[last]
                    Xty[j0] = Xty[last]
                    yty[j0] = yty[last]
                    logm[j0] = logm[last]
                for a in range(sizes[j0]):
                    pos[members[j0, a]] = a
            k -= 1
        else:
            if use_lik:
                logm[j0] = _block_logm(j0, sizes, XtX, Xty, yty, P0, h0, q0, a0, b0, logdetP0, P, h, L, w)
            if use_sim:
                _remove_sim(i, j0, sizes, members, Z, B, cent, dc, ones, dtot, wc, wb, tol, maxit)

        for j in range(k):
            val = math.log(sizes[j] - sigma)
            if use_lik:
                val += _block_logm_plus(j, xi, yi, sizes, XtX, Xty, yty, P0, h0, q0, a0, b0,
                                        logdetP0, P, h, L, w) - logm[j]
            if use_sim:
                cand_d[j] = _candidate_sim(i, j, sizes, members, Z, B, cent, ones, cand_cent,
                                           cand_dc, wc, wb, tol, maxit)
                val += log_g(cand_d[j], fam, lam, alpha) - log_g(dtot[j], fam, lam, alpha)
            lw[j] = val
        val = log_new
        if use_lik:
            val += _block_logm_plus(-1, xi, yi, sizes, XtX, Xty, yty, P0, h0, q0, a0, b0,
                                    logdetP0, P, h, L, w)
        lw[k] = val
        choice = _categorical(lw, k + 1)
        is_new = choice == k
        if is_new:
            k += 1
            sizes[choice] = 0
            if use_lik:
                XtX[choice] = 0.0
                Xty[choice] = 0.0
                yty[choice] = 0.0
        _attach(i, choice, s, sizes, members, pos)
        if use_lik:
            for r in range(p):
                Xty[choice, r] += xi[r] * yi
                for c in range(p):
                    XtX[choice, r, c] += xi[r] * xi[c]
            yty[choice] += yi * yi
            logm[choice] = _block_logm(choice, sizes, XtX, Xty, yty, P0, h0, q0, a0, b0, logdetP0, P, h, L, w)
        if use_sim:
            _add_sim(i, choice, is_new, Z, B, cent, dc, ones, dtot, cand_cent, cand_dc, cand_d)
    return k


@njit(cache=True)
def prior_chain(s, k, sizes, members, pos, Z, B, fam, lam, alpha, wc, wb,
                cent, dc, ones, dtot, tol, maxit,
                u, kappa, sigma, sd, n_sweeps, thin, out_alloc, out_u, rseed):
    """Run the likelihood-free marginal Gibbs chain, storing every ``thin``-th sweep."""
    np.random.seed(rseed)
    n = s.shape[0]
    order = np.arange(n)
    X = np.zeros((n, 0))
    y = np.zeros(n)
    XtX = np.zeros((1, 0, 0))
    Xty = np.zeros((1, 0))
    yty = np.zeros(1)
    logm = np.zeros(1)
    P0 = np.zeros((0, 0))
    h0 = np.zeros(0)
    acc = 0
    rec = 0
    for sweep in range(n_sweeps):
        u, ok = u_update(u, n, k, kappa, sigma, sd)
        acc += ok
        k = conj_reassign(order, s, k, sizes, members, pos, X, y, False, XtX, Xty, yty, logm,
                          P0, h0, 0.0, 1.0, 1.0, 0.0, Z, B, fam, lam, alpha, wc, wb,
                          cent, dc, ones, dtot, tol, maxit, u, kappa, sigma,
                          np.random.randint(0, 2 ** 31 - 1))
        if (sweep + 1) % thin == 0:
            out_alloc[rec, :] = s
            out_u[rec] = u
            rec += 1
    return k, u, acc


@njit(cache=True)
def _subject_loglik(i, T, Y, off, eta, a, ps, s2):
    tot = 0.0
    ls = math.log(s2)
    for t in range(T[i]):
        r = Y[i, t] - a - off[i, t] - ps * eta[i, t]
        tot += -0.5 * (LOG_2PI + ls) - 0.5 * r * r / s2
    return tot


@njit(cache=True)
def _draw_p0(alpha0, psi0, kappa0, kappa1, a, b):
    s2 = 1.0 / np.random.gamma(a, 1.0 / b)
    al = alpha0 + math.sqrt(s2 * kappa0) * np.random.standard_normal()
    ps = psi0 + math.sqrt(s2 * kappa1) * np.random.standard_normal()
    return al, ps, s2


@njit(cache=True)
def rec_reassign(order, s, k, sizes, members, pos,
                 Y, off, eta, T, th_a, th_p, th_s,
                 aux_a, aux_p, aux_s, alpha0, psi0, kappa0, kappa1, a, b,
                 Z, B, fam, lam, alpha, wc, wb, cent, dc, ones, dtot, tol, maxit,
                 u, kappa, sigma, rseed):
    """Neal's Algorithm 8 with re-used auxiliary parameters; returns the new k."""
    np.random.seed(rseed)
    R = aux_a.shape[0]
    kmax = sizes.shape[0]
    mc = Z.shape[1]
    use_sim = fam != FAM_ONE
    lw = np.empty(kmax + R)
    cand_cent = np.empty((kmax, mc))
    cand_dc = np.empty(kmax)
    cand_d = np.empty(kmax)
    log1pu = math.log1p(u)
    log_new = math.log(kappa) + sigma * log1pu - math.log(R)
    for r in range(R):
        aux_a[r], aux_p[r], aux_s[r] = _draw_p0(alpha0, psi0, kappa0, kappa1, a, b)
    for oi in range(order.shape[0]):
        i = order[oi]
        j0 = _detach(i, s, sizes, members, pos)
        if sizes[j0] == 0:
            # emptied block: its parameters take a random auxiliary slot
            r = np.random.randint(0, R)
            aux_a[r] = th_a[j0]
            aux_p[r] = th_p[j0]
            aux_s[r] = th_s[j0]
            last = k - 1
            if j0 != last:
                _move_block(last, j0, s, sizes, members, cent, dc, ones, dtot)
                th_a[j0] = th_a[last]
                th_p[j0] = th_p[last]
                th_s[j0] = th_s[last]
                for q in range(sizes[j0]):
                    pos[members[j0, q]] = q
            k -= 1
        elif use_sim:
            _remove_sim(i, j0, sizes, members, Z, B, cent, dc, ones, dtot, wc, wb, tol, maxit)

        for j in range(k):
            val = math.log(sizes[j] - sigma)
            val += _subject_loglik(i, T, Y, off, eta, th_a[j], th_p[j], th_s[j])
            if use_sim:
                cand_d[j] = _candidate_sim(i, j, sizes, members, Z, B, cent, ones, cand_cent,
                                           cand_dc, wc, wb, tol, maxit)
                val += log_g(cand_d[j], fam, lam, alpha) - log_g(dtot[j], fam, lam, alpha)
            lw[j] = val
        for r in range(R):
            lw[k + r] = log_new + _subject_loglik(i, T, Y, off, eta, aux_a[r], aux_p[r], aux_s[r])
        choice = _categorical(lw, k + R)
        is_new = choice >= k
        if is_new:
            r = choice - k
            choice = k
            k += 1
            sizes[choice] = 0
            th_a[choice] = aux_a[r]
            th_p[choice] = aux_p[r]
            th_s[choice] = aux_s[r]
            aux_a[r], aux_p[r], aux_s[r] = _draw_p0(alpha0, psi0, kappa0, kappa1, a, b)
        _attach(i, choice, s, sizes, members, pos)
        if use_sim:
            _add_sim(i, choice, is_new, Z, B, cent, dc, ones, dtot, cand_cent, cand_dc, cand_d)
    return k


@njit(cache=True)
def log_sim_ratios_new_item(s, k, Z, B, znew, bnew, fam, lam, alpha, wc, wb, tol, maxit):
    """log g(A_j + new) - log g(A_j) for every block of the allocation ``s``.

    The new item is appended as row ``n`` of an extended copy of the covariates.
    """
    n = s.shape[0]
    mc = Z.shape[1]
    out = np.zeros(k)
    if fam == FAM_ONE:
        return out
    Ze = np.empty((n + 1, mc))
    Ze[:n] = Z
    Ze[n] = znew
    Be = np.empty((n + 1, B.shape[1]), dtype=B.dtype)
    Be[:n] = B
    Be[n] = bnew
    sizes = np.zeros(k, dtype=np.int64)
    members = np.empty((k, n), dtype=np.int64)
    for i in range(n):
        j = s[i]
        members[j, sizes[j]] = i
        sizes[j] += 1
    c = np.empty(mc)
    init = np.empty(mc)
    for j in range(k):
        init[:] = 0.0
        for a in range(sizes[j]):
            init += Ze[members[j, a]] / sizes[j]
        d0, _, _ = block_compactness(Ze, Be, members[j], sizes[j], -1, init, c, wc, wb, tol, maxit)
        d1, _, _ = block_compactness(Ze, Be, members[j], sizes[j], n, c.copy(), c, wc, wb, tol, maxit)
        out[j] = log_g(d1, fam, lam, alpha) - log_g(d0, fam, lam, alpha)
    return out


# ---------------------------------------------------------------------------
# partition comparisons


@njit(cache=True)
def vi_labels(a, b, ka, kb, tab, ra, rb):
    """Variation of information (nats) between label vectors with ka and kb labels."""
    n = a.shape[0]
    tab[:ka, :kb] = 0
    ra[:ka] = 0
    rb[:kb] = 0
    for i in range(n):
        tab[a[i], b[i]] += 1
        ra[a[i]] += 1
        rb[b[i]] += 1
    # VI = sum_ij n_ij/n * (log(n_i/n_ij) + log(n_j/n_ij))
    v = 0.0
    for x in range(ka):
        for y in range(kb):
            c = tab[x, y]
            if c > 0:
                v += c * (math.log(ra[x]) + math.log(rb[y]) - 2.0 * math.log(c))
    return v / n


@njit(cache=True)
def expected_vi(cands, allocs):
    """Trace-averaged VI of every candidate row against every stored allocation."""
    nc, n = cands.shape
    G = allocs.shape[0]
    tab = np.zeros((n, n), dtype=np.int64)
    ra = np.zeros(n, dtype=np.int64)
    rb = np.zeros(n, dtype=np.int64)
    kb = np.empty(G, dtype=np.int64)
    for g in range(G):
        kb[g] = allocs[g].max() + 1
    out = np.zeros(nc)
    for c in range(nc):
        ka = cands[c].max() + 1
        acc = 0.0
        for g in range(G):
            acc += vi_labels(cands[c], allocs[g], ka, kb[g], tab, ra, rb)
        out[c] = acc / G
    return out


@njit(cache=True)
def coclustering(allocs):
    G, n = allocs.shape
    out = np.zeros((n, n))
    for g in range(G):
        a = allocs[g]
        for i in range(n):
            for l in range(i + 1, n):
                if a[i] == a[l]:
                    out[i, l] += 1.0
    for i in range(n):
        out[i, i] = G
        for l in range(i + 1, n):
            out[l, i] = out[i, l]
    return out / G
