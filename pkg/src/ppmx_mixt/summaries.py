"""Posterior summaries: co-clustering, VI point estimate, LPML and error metrics."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import cut_tree, linkage
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import squareform
from scipy.special import logsumexp

from . import _kernels as K
from .core import MixedCovariateMatrix, Partition, canonical_labels
from .errors import ConfigError, EmptyTrace, NonFiniteCPO, SizeMismatch
from .trace import TraceStore


@dataclass(frozen=True)
class PosteriorSimilarityMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("similarity matrix must be square")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)

    def to_csv(self, path):
        np.savetxt(path, self.matrix, delimiter=",", fmt="%.17g")


def _allocs(trace) -> np.ndarray:
    if isinstance(trace, TraceStore):
        return np.ascontiguousarray(trace.allocation_matrix())
    a = np.atleast_2d(np.asarray([p.allocations if isinstance(p, Partition) else p for p in trace],
                                 dtype=np.int64))
    if a.size == 0:
        raise EmptyTrace("trace has no retained iterations")
    return np.ascontiguousarray(np.vstack([canonical_labels(r) for r in a]))


def similarity_matrix(trace) -> PosteriorSimilarityMatrix:
    """Fraction of retained iterations in which each pair of items shares a block."""
    return PosteriorSimilarityMatrix(K.coclustering(_allocs(trace)))


def _labels(p):
    return p.allocations if isinstance(p, Partition) else np.asarray(p, dtype=np.int64)


def vi_distance(p1, p2) -> float:
    """Variation of information in nats."""
    a, b = canonical_labels(_labels(p1)), canonical_labels(_labels(p2))
    if a.size != b.size:
        raise SizeMismatch("partitions of different sizes")
    n = a.size
    tab = np.zeros((n, n), dtype=np.int64)
    ra = np.zeros(n, dtype=np.int64)
    rb = np.zeros(n, dtype=np.int64)
    return max(K.vi_labels(a, b, int(a.max()) + 1, int(b.max()) + 1, tab, ra, rb), 0.0)


def vi_lower_bound(candidate, psm) -> float:
    """Jensen lower bound on the expected VI computed from the co-clustering matrix alone."""
    c = canonical_labels(_labels(candidate))
    P = np.asarray(psm, dtype=float)
    same = c[:, None] == c[None, :]
    n_c = same.sum(1)
    return float(np.mean(np.log(n_c) + np.log(P.sum(1)) - 2 * np.log((same * P).sum(1))))


def dendrogram_candidates(psm) -> np.ndarray:
    """All cuts (1..n blocks) of the complete-linkage tree on 1 - PSM, canonical rows."""
    P = np.asarray(psm, dtype=float)
    n = P.shape[0]
    if n == 1:
        return np.zeros((1, 1), dtype=np.int64)
    D = 1.0 - P
    np.fill_diagonal(D, 0.0)
    Z = linkage(squareform(np.clip(D, 0.0, None), checks=False), method="complete")
    # cut_tree mislabels the n-cluster cut, so the singletons are added by hand
    cuts = cut_tree(Z, n_clusters=np.arange(1, n)).T
    out = np.vstack([canonical_labels(r) for r in cuts] + [np.arange(n)])
    return np.unique(out, axis=0)


def estimate_partition_vi(trace, psm=None, prefilter: int | None = None, return_loss=False):
    """Dendrogram cut with the smallest trace-averaged VI.

    ``prefilter`` keeps only that many candidates with the smallest PSM lower
    bound before the exact evaluation.
    """
    allocs = _allocs(trace)
    psm = similarity_matrix(allocs) if psm is None else psm
    cands = dendrogram_candidates(psm)
    if prefilter is not None and prefilter < len(cands):
        lb = np.array([vi_lower_bound(c, psm) for c in cands])
        cands = cands[np.argsort(lb, kind="stable")[:prefilter]]
    loss = K.expected_vi(np.ascontiguousarray(cands), allocs)
    best = int(np.argmin(loss))
    est = Partition(cands[best])
    return (est, float(loss[best])) if return_loss else est


def lpml(trace) -> tuple[float, np.ndarray]:
    """LPML and per-item log CPO from harmonic means of the stored densities."""
    ll = trace.loglik_matrix() if isinstance(trace, TraceStore) else np.atleast_2d(np.asarray(trace, dtype=float))
    if ll.size == 0:
        raise EmptyTrace("no log densities stored")
    G = ll.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        log_cpo = math.log(G) - logsumexp(-ll, axis=0)
    bad = ~np.isfinite(log_cpo)
    if bad.any():
        warnings.warn(f"non-finite CPO for items {np.flatnonzero(bad).tolist()}", NonFiniteCPO)
    return float(log_cpo[~bad].sum()), log_cpo


def misclassification_rate(estimate, truth) -> float:
    """Share of items outside the best one-to-one matching of estimated and true blocks."""
    a, b = canonical_labels(_labels(estimate)), canonical_labels(_labels(truth))
    if a.size != b.size:
        raise SizeMismatch("partitions of different sizes")
    conf = np.zeros((b.max() + 1, a.max() + 1), dtype=np.int64)
    np.add.at(conf, (b, a), 1)
    r, c = linear_sum_assignment(conf, maximize=True)
    return float(1.0 - conf[r, c].sum() / a.size)


# ---------------------------------------------------------------------------
# cross validation


@dataclass(frozen=True)
class SplitSpec:
    n_splits: int = 50
    train_frac: float = 0.9

    def validate(self, n):
        if self.n_splits < 1:
            raise ConfigError("cv.n_splits must be >= 1")
        if not 0 < self.train_frac < 1:
            raise ConfigError("cv.train_frac must lie in (0, 1)")
        n_train = int(round(self.train_frac * n))
        if n_train < 1 or n_train >= n:
            raise ConfigError("split leaves an empty training or test set")
        return n_train


def rmse_cv(dataset, config, split_spec: SplitSpec = SplitSpec(), rng=None, fit_predict=None) -> float:
    """Root mean squared prediction error pooled over random train/test splits.

    ``fit_predict(train, test, config, rng)`` returns ``(predictions, truth)``
    for the held-out part. The default fits the sampler matching the dataset type
    and predicts with posterior predictive means.
    """
    rng = np.random.default_rng(rng)
    n = dataset.n
    n_train = split_spec.validate(n)
    if fit_predict is None:
        fit_predict = _default_fit_predict(dataset)
    sq, cnt = 0.0, 0
    for _ in range(split_spec.n_splits):
        perm = rng.permutation(n)
        train, test = np.sort(perm[:n_train]), np.sort(perm[n_train:])
        pred, truth = fit_predict(dataset.subset(train), dataset.subset(test), config, rng)
        pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
        sq += float(((pred - truth) ** 2).sum())
        cnt += truth.size
    return math.sqrt(sq / cnt)


def _default_fit_predict(dataset):
    from .conjugate import RegressionData
    from .core import RecurrentDataset

    if isinstance(dataset, RecurrentDataset):
        from .recurrent import cv_fit_predict
        return cv_fit_predict
    if isinstance(dataset, RegressionData):
        from .conjugate import cv_fit_predict
        return cv_fit_predict
    raise ConfigError(f"no default predictor for {type(dataset).__name__}")


# ---------------------------------------------------------------------------
# reports


def cluster_covariate_summary(partition, X: MixedCovariateMatrix, names=None) -> list[dict]:
    """Per-block size, continuous means and binary frequencies."""
    p = partition if isinstance(partition, Partition) else Partition.from_labels(partition)
    names = names or ([f"c{c}" for c in range(X.m_c)] + [f"b{c}" for c in range(X.m_b)])
    rows = []
    for j, blk in enumerate(p.blocks):
        row = {"block": j, "size": len(blk)}
        vals = np.concatenate([X.continuous[blk].mean(0), X.binary[blk].mean(0)])
        row.update(zip(names, vals.tolist()))
        rows.append(row)
    return rows


def write_rows(path, rows: list[dict]):
    if not rows:
        open(path, "w").close()
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
