"""Covariate compactness and the similarity functions built on it.

The mixed distance between two covariate rows is

    d(x1, x2) = (m_c/m) * mahalanobis(x1c, x2c) + (m_b/m) * hamming(x1b, x2b) / m_b

A block's compactness D is the summed distance of its members to their
order-one Frechet mean. Because d splits additively, that mean is the
geometric median of the continuous parts paired with the component-wise
majority vote of the binary parts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .core import MixedCovariateMatrix, SimilarityConfig
from .errors import DegenerateCovariates, DimensionMismatch, EmptySet, NonConvergence

WEISZFELD_TOL = 1e-9
WEISZFELD_MAXIT = 10_000


def distance(x1, x2, ctx: MixedCovariateMatrix) -> float:
    """Mixed Mahalanobis/Hamming distance between two rows ``(continuous, binary)``."""
    (c1, b1), (c2, b2) = x1, x2
    c1, c2 = np.atleast_1d(np.asarray(c1, dtype=float)), np.atleast_1d(np.asarray(c2, dtype=float))
    b1, b2 = np.atleast_1d(np.asarray(b1)), np.atleast_1d(np.asarray(b2))
    if c1.size != ctx.m_c or c2.size != ctx.m_c or b1.size != ctx.m_b or b2.size != ctx.m_b:
        raise DimensionMismatch("row does not match the covariate layout")
    d = 0.0
    if ctx.m_c:
        diff = c1 - c2
        d += ctx.m_c / ctx.m * math.sqrt(max(diff @ ctx.metric_context @ diff, 0.0))
    if ctx.m_b:
        d += ctx.m_b / ctx.m * np.count_nonzero(b1 != b2) / ctx.m_b
    return d


def _index_array(block) -> np.ndarray:
    idx = np.asarray(sorted(block) if isinstance(block, (set, frozenset)) else block, dtype=np.int64)
    return np.ascontiguousarray(idx.ravel())


def frechet_centroid(rows, ctx: MixedCovariateMatrix, tol=WEISZFELD_TOL, maxit=WEISZFELD_MAXIT):
    """Order-one Frechet mean of a set of rows of ``ctx`` (given by item indices).

    Returns ``(centroid_c, centroid_b)`` in the original covariate units. Ties in
    the binary majority vote resolve to 0.
    """
    idx = _index_array(rows)
    if idx.size == 0:
        raise EmptySet("centroid of an empty set")
    c, _, it = _continuous_median(idx, ctx, tol, maxit)
    centroid_c = ctx.unwhiten(c)
    counts = ctx.binary[idx].sum(axis=0)
    centroid_b = (2 * counts > idx.size).astype(np.int64)
    return centroid_c, centroid_b


def _continuous_median(idx, ctx, tol, maxit, init=None):
    Z = ctx.whitened
    out = np.zeros(ctx.m_c)
    if init is None:
        init = Z[idx].mean(axis=0) if ctx.m_c else out.copy()
    dc, it = K.geomedian(Z, idx, idx.size, -1, np.asarray(init, dtype=float), out, tol, maxit)
    if it >= maxit:
        raise NonConvergence(f"Weiszfeld iteration did not converge in {maxit} steps")
    return out, dc, it


@dataclass(frozen=True)
class ClusterGeometry:
    centroid_c: np.ndarray
    centroid_b: np.ndarray
    d_total: float


def compactness(block, X: MixedCovariateMatrix, tol=WEISZFELD_TOL, maxit=WEISZFELD_MAXIT) -> ClusterGeometry:
    """Centroid and summed centroid distance of the items in ``block``."""
    idx = _index_array(block)
    if idx.size == 0:
        raise EmptySet("compactness of an empty block")
    z, dc, _ = _continuous_median(idx, X, tol, maxit)
    counts = X.binary[idx].sum(axis=0)
    mism = np.minimum(counts, idx.size - counts).sum()
    wc, wb = X.weights
    cb = (2 * counts > idx.size).astype(np.int64)
    return ClusterGeometry(X.unwhiten(z), cb, float(wc * dc + wb * mism))


def log_similarity(D, cfg: SimilarityConfig) -> float:
    """log g(D). Everything downstream combines similarities in log space."""
    if D < 0:
        raise ValueError("compactness must be non-negative")
    return K.log_g(float(D), cfg.family.code, cfg.lam, cfg.alpha)


def similarity(D, cfg: SimilarityConfig) -> float:
    return math.exp(log_similarity(D, cfg))


def log_similarity_ratio(block, new_item: int, X: MixedCovariateMatrix, cfg: SimilarityConfig) -> float:
    """log g(D of block + new item) - log g(D of block); zero for an empty block."""
    if cfg.is_constant:
        return 0.0
    idx = _index_array(block)
    if new_item in set(idx.tolist()):
        raise ValueError("new item already belongs to the block")
    if idx.size == 0:
        return 0.0
    d0 = compactness(idx, X).d_total
    d1 = compactness(np.append(idx, new_item), X).d_total
    return log_similarity(d1, cfg) - log_similarity(d0, cfg)


def compactness_increment(block, new_item, X) -> float:
    idx = _index_array(block)
    d0 = compactness(idx, X).d_total
    return compactness(np.append(idx, new_item), X).d_total - d0


def calibrate_lambda(X: MixedCovariateMatrix, eps_star: float, n_mc: int = 100, rng=None,
                     return_increment=False):
    """Temperature that maps the mean compactness increment onto ``eps_star``.

    Each Monte Carlo sweep draws, for every block size 2..n-1, one uniform block
    and one uniform outside item and records the increase in D. The mean of all
    records is the typical increment; the returned value is ``eps_star / mean``.
    """
    rng = np.random.default_rng(rng)
    n = X.n
    if n < 3:
        raise ValueError("calibration needs at least three items")
    incs = _increment_sweeps(X, n_mc, rng)
    eps_hat = float(np.mean(incs))
    if eps_hat <= 0:
        raise DegenerateCovariates("all compactness increments are zero; supply lambda explicitly")
    lam = eps_star / eps_hat
    return (lam, eps_hat) if return_increment else lam


def _increment_sweeps(X, n_mc, rng):
    n = X.n
    Z = X.whitened
    B = X.binary
    wc, wb = X.weights
    out = np.empty((n_mc, n - 2))
    c = np.zeros(X.m_c)
    for sweep in range(n_mc):
        for a, nj in enumerate(range(2, n)):
            perm = rng.permutation(n)
            idx = np.ascontiguousarray(perm[:nj])
            extra = int(perm[nj])
            init = Z[idx].mean(axis=0) if X.m_c else c
            d0, _, _ = K.block_compactness(Z, B, idx, nj, -1, init, c, wc, wb, WEISZFELD_TOL, WEISZFELD_MAXIT)
            d1, _, _ = K.block_compactness(Z, B, idx, nj, extra, c.copy(), c, wc, wb,
                                           WEISZFELD_TOL, WEISZFELD_MAXIT)
            out[sweep, a] = d1 - d0
    return out
