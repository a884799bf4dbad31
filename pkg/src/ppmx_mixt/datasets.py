"""Synthetic data generators for the benchmarks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import MixedCovariateMatrix, Partition, RecClusterParams, RecurrentDataset
from .errors import SpecError

APPX_E_SIZES = (75, 75, 50)
APPX_E_MEANS = np.array([[-3.0, 3.0], [0.0, 0.0], [3.0, 3.0]])
APPX_E_Q = (0.1, 0.5, 0.9)
APPX_E_BETA = np.array([
    [1.0, 5.0, 2.0, 1.0, 0.0],
    [4.0, 2.0, -2.0, 1.0, -1.0],
    [-1.0, -5.0, -2.0, -1.0, 1.0],
])


@dataclass(frozen=True)
class RegressionSample:
    y: np.ndarray
    covariates: MixedCovariateMatrix
    design: np.ndarray
    truth: Partition


def simulate_appendix_e(rng=None) -> RegressionSample:
    """Three-group regression data: 75/75/50 items, 2 continuous and 2 binary covariates.

    The design row is (1, x1, x2, x3, x4); the similarity uses (x1, x2 | x3, x4).
    """
    rng = np.random.default_rng(rng)
    xc, xb, labels = [], [], []
    for j, nj in enumerate(APPX_E_SIZES):
        xc.append(APPX_E_MEANS[j] + np.sqrt(0.5) * rng.standard_normal((nj, 2)))
        xb.append((rng.random((nj, 2)) < APPX_E_Q[j]).astype(np.int64))
        labels += [j] * nj
    xc, xb = np.vstack(xc), np.vstack(xb)
    labels = np.array(labels)
    design = np.column_stack([np.ones(len(labels)), xc, xb])
    mean = np.einsum("ij,ij->i", design, APPX_E_BETA[labels])
    y = mean + np.sqrt(0.5) * rng.standard_normal(len(labels))
    cov = MixedCovariateMatrix.from_arrays(xc, xb)
    return RegressionSample(y, cov, design, Partition.from_labels(labels))


@dataclass
class RecurrentSpec:
    """Generator settings for recurrent gap-time data.

    Cluster j has parameters (alpha, psi, sigma2) and its own similarity
    covariates: continuous ~ N(cont_means[j], cont_sd^2 I), binary ~
    Bern(bin_probs[j]). Fixed-time regression covariates (p1 = len(beta0)) and
    time-varying ones (p2 = beta_t.shape[1]) are standard normal for everyone.
    """
    cluster_sizes: tuple = (40, 40, 40)
    cluster_params: tuple = (RecClusterParams(-1.5, 0.5, 0.2), RecClusterParams(0.0, 1.0, 0.2),
                             RecClusterParams(1.5, 0.0, 0.3))
    cont_means: np.ndarray = field(default_factory=lambda: np.array([[-2.0, 2.0], [0.0, 0.0], [2.0, 2.0]]))
    cont_sd: float = 0.6
    bin_probs: np.ndarray = field(default_factory=lambda: np.array([[0.1], [0.5], [0.9]]))
    beta0: np.ndarray = field(default_factory=lambda: np.array([0.3]))
    beta_t: np.ndarray = field(default_factory=lambda: np.array([[0.3], [0.2], [0.1], [0.0], [0.0], [0.0]]))
    min_events: int = 2
    max_events: int = 5

    def validate(self):
        kk = len(self.cluster_sizes)
        if kk < 1 or len(self.cluster_params) != kk:
            raise SpecError("cluster_sizes and cluster_params must have the same positive length")
        if any(s < 1 for s in self.cluster_sizes):
            raise SpecError("cluster sizes must be positive")
        if np.asarray(self.cont_means).shape[0] != kk or np.asarray(self.bin_probs).shape[0] != kk:
            raise SpecError("covariate distributions must be given per cluster")
        if np.any((np.asarray(self.bin_probs) < 0) | (np.asarray(self.bin_probs) > 1)):
            raise SpecError("Bernoulli probabilities must lie in [0, 1]")
        if not 1 <= self.min_events <= self.max_events:
            raise SpecError("need 1 <= min_events <= max_events")
        if np.atleast_2d(np.asarray(self.beta_t)).shape[0] < self.max_events + 1:
            raise SpecError("beta_t needs a row per occasion up to max_events + 1")
        for th in self.cluster_params:
            if not th.sigma2 > 0:
                raise SpecError("sigma2 must be positive")


def simulate_recurrent_synthetic(spec: RecurrentSpec | None = None, rng=None):
    """Recurrent log gap times with exactly one censored occasion per subject.

    Y_it = x_i' beta0 + z_it' beta_t + alpha_j + psi_j eta_it + eps_it, with
    eta_it ~ N+(0, 1) and eps_it ~ N(0, sigma2_j). Subject i has m_i observed
    gaps (uniform on min_events..max_events); its (m_i+1)-th gap is generated
    and the censoring time falls uniformly inside it.
    Returns ``(dataset, truth)``.
    """
    spec = spec or RecurrentSpec()
    spec.validate()
    rng = np.random.default_rng(rng)
    beta0 = np.asarray(spec.beta0, dtype=float).reshape(-1)
    beta_t = np.atleast_2d(np.asarray(spec.beta_t, dtype=float))
    p1, p2 = beta0.size, beta_t.shape[1]
    ys, bounds, xf, xt, cc, bb, labels = [], [], [], [], [], [], []
    for j, nj in enumerate(spec.cluster_sizes):
        th = spec.cluster_params[j]
        for _ in range(nj):
            c = spec.cont_means[j] + spec.cont_sd * rng.standard_normal(len(spec.cont_means[j]))
            b = (rng.random(len(spec.bin_probs[j])) < spec.bin_probs[j]).astype(np.int64)
            x = rng.standard_normal(p1)
            m = int(rng.integers(spec.min_events, spec.max_events + 1))
            z = rng.standard_normal((m + 1, p2))
            eta = np.abs(rng.standard_normal(m + 1))
            eps = np.sqrt(th.sigma2) * rng.standard_normal(m + 1)
            y = x @ beta0 + np.einsum("tp,tp->t", z, beta_t[: m + 1]) + th.alpha + th.psi * eta + eps
            gaps = np.exp(y)
            tau = gaps[:m].sum() + rng.uniform(0.0, 1.0) * gaps[m]
            ys.append(y[:m])
            bounds.append(np.log(tau - gaps[:m].sum()))
            xf.append(x)
            xt.append(z)
            cc.append(c)
            bb.append(b)
            labels.append(j)
    cov = MixedCovariateMatrix.from_arrays(np.array(cc), np.array(bb))
    data = RecurrentDataset.from_lists(ys, bounds, np.array(xf), xt, cov)
    return data, Partition.from_labels(labels)
