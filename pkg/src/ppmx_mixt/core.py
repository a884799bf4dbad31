"""Domain types shared by the samplers.

Partitions are stored as label vectors. The canonical labeling orders blocks
by their smallest member, which is what gets serialized and compared.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

from .errors import (
    ConfigError,
    DimensionMismatch,
    EmptyBlock,
    NonBinaryValue,
    NonContiguousLabels,
    SizeMismatch,
)


def canonical_labels(labels) -> np.ndarray:
    """Relabel so that blocks are numbered in order of first appearance."""
    labels = np.asarray(labels)
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inverse.ravel()].astype(np.int64)


class Partition:
    """Allocation of items ``0..n-1`` into non-empty blocks."""

    __slots__ = ("_alloc", "__dict__")

    def __init__(self, allocations):
        alloc = np.array(allocations, dtype=np.int64).ravel()
        alloc.flags.writeable = False
        self._alloc = alloc

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        return cls(canonical_labels(labels))

    @classmethod
    def from_blocks(cls, blocks, n=None) -> "Partition":
        blocks = [list(b) for b in blocks]
        if any(len(b) == 0 for b in blocks):
            raise EmptyBlock("partition contains an empty block")
        total = sum(len(b) for b in blocks)
        n = total if n is None else n
        alloc = np.full(n, -1, dtype=np.int64)
        for j, b in enumerate(blocks):
            for i in b:
                if not 0 <= i < n or alloc[i] != -1:
                    raise SizeMismatch("blocks are not a partition of range(n)")
                alloc[i] = j
        if total != n or (alloc < 0).any():
            raise SizeMismatch("blocks do not cover range(n)")
        return cls.from_labels(alloc)

    @classmethod
    def singletons(cls, n) -> "Partition":
        return cls(np.arange(n))

    @classmethod
    def one_block(cls, n) -> "Partition":
        return cls(np.zeros(n, dtype=np.int64))

    @property
    def allocations(self) -> np.ndarray:
        return self._alloc

    @property
    def n(self) -> int:
        return len(self._alloc)

    @cached_property
    def k(self) -> int:
        return len(np.unique(self._alloc))

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.bincount(self._alloc, minlength=self.k)

    @cached_property
    def blocks(self) -> list[np.ndarray]:
        order = np.argsort(self._alloc, kind="stable")
        bounds = np.cumsum(np.bincount(self._alloc))[:-1]
        return np.split(order, bounds)

    def canonical(self) -> "Partition":
        return Partition(canonical_labels(self._alloc))

    def to_string(self) -> str:
        return " ".join(map(str, self.canonical().allocations))

    @classmethod
    def from_string(cls, text: str) -> "Partition":
        return cls([int(t) for t in text.split()])

    def key(self) -> tuple:
        return tuple(self.canonical().allocations.tolist())

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return self.n == other.n and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"Partition({self.to_string()!r})"


def validate(partition, n: int) -> None:
    """Raise a ``PartitionError`` unless ``partition`` is a valid partition of n items.

    Accepts a :class:`Partition`, a label sequence or a list of blocks (sets).
    """
    if isinstance(partition, (list, tuple)) and partition and isinstance(
        partition[0], (set, frozenset, list, tuple, np.ndarray)
    ) and not np.isscalar(partition[0]):
        Partition.from_blocks(partition, n)
        return
    alloc = partition.allocations if isinstance(partition, Partition) else np.asarray(partition)
    if alloc.ndim != 1 or len(alloc) != n:
        raise SizeMismatch(f"expected {n} allocations, got {alloc.size}")
    if n == 0:
        return
    if alloc.min() < 0:
        raise NonContiguousLabels("negative block label")
    present = np.bincount(alloc)
    if (present == 0).any():
        missing = int(np.flatnonzero(present == 0)[0])
        raise NonContiguousLabels(f"label {missing} is skipped")


class Metric(str, Enum):
    SAMPLE = "sample"
    DIAGONAL = "diagonal"
    IDENTITY = "identity"


def metric_from_data(continuous: np.ndarray, kind="sample") -> np.ndarray:
    """Inverse covariance used by the Mahalanobis part of the mixed distance."""
    mc = continuous.shape[1]
    if mc == 0:
        return np.zeros((0, 0))
    kind = Metric(kind)
    if kind is Metric.IDENTITY or continuous.shape[0] < 2:
        return np.eye(mc)
    cov = np.atleast_2d(np.cov(continuous, rowvar=False))
    if kind is Metric.DIAGONAL:
        cov = np.diag(np.diag(cov))
    diag = np.diag(cov)
    if (diag <= 0).any() or not _is_spd(cov):
        ridge = 1e-8 * (diag.mean() if diag.mean() > 0 else 1.0)
        cov = cov + ridge * np.eye(mc)
    return np.linalg.inv(cov)


def _is_spd(a) -> bool:
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass(frozen=True)
class MixedCovariateMatrix:
    """Continuous and binary covariates plus the Mahalanobis metric context."""

    continuous: np.ndarray
    binary: np.ndarray
    metric_context: np.ndarray

    def __post_init__(self):
        c = np.array(self.continuous, dtype=float, ndmin=2)
        b = np.array(self.binary, ndmin=2)
        if c.shape[0] != b.shape[0]:
            raise DimensionMismatch("continuous and binary parts have different row counts")
        if np.isnan(c).any():
            raise ValueError("missing values in continuous covariates")
        if b.size and not np.isin(b, (0, 1)).all():
            raise NonBinaryValue("binary covariates must be 0/1")
        s = np.array(self.metric_context, dtype=float, ndmin=2).reshape(c.shape[1], c.shape[1])
        if c.shape[1] and (not np.allclose(s, s.T) or not _is_spd(s)):
            raise ValueError("metric_context must be symmetric positive-definite")
        for name, val in (("continuous", c), ("binary", b.astype(np.int64)), ("metric_context", s)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)

    @classmethod
    def from_arrays(cls, continuous=None, binary=None, metric="sample") -> "MixedCovariateMatrix":
        if continuous is None and binary is None:
            raise ValueError("need at least one covariate block")
        n = len(continuous) if continuous is not None else len(binary)
        c = np.zeros((n, 0)) if continuous is None else np.array(continuous, dtype=float).reshape(n, -1)
        b = np.zeros((n, 0), dtype=np.int64) if binary is None else np.asarray(binary).reshape(n, -1)
        s = np.asarray(metric, dtype=float) if isinstance(metric, np.ndarray) else metric_from_data(c, metric)
        return cls(c, b, s)

    @property
    def n(self) -> int:
        return self.continuous.shape[0]

    @property
    def m_c(self) -> int:
        return self.continuous.shape[1]

    @property
    def m_b(self) -> int:
        return self.binary.shape[1]

    @property
    def m(self) -> int:
        return self.m_c + self.m_b

    @cached_property
    def cholesky(self) -> np.ndarray:
        if self.m_c == 0:
            return np.zeros((0, 0))
        return np.linalg.cholesky(self.metric_context)

    @cached_property
    def whitened(self) -> np.ndarray:
        """Continuous rows mapped so that Mahalanobis distance becomes Euclidean."""
        return np.ascontiguousarray(self.whiten(self.continuous))

    def whiten(self, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=float)
        if self.m_c == 0:
            return np.zeros((rows.shape[0] if rows.ndim == 2 else 1, 0))
        rows = rows.reshape(-1, self.m_c)
        return rows @ self.cholesky

    def unwhiten(self, z) -> np.ndarray:
        if self.m_c == 0:
            return np.zeros(0)
        return np.linalg.solve(self.cholesky.T, np.asarray(z, dtype=float))

    @property
    def weights(self) -> tuple[float, float]:
        """(continuous weight, weight per mismatching bit) of the mixed distance."""
        m = self.m
        return self.m_c / m, 1.0 / m

    def row(self, i):
        return self.continuous[i], self.binary[i]

    def subset(self, idx) -> "MixedCovariateMatrix":
        idx = np.asarray(idx)
        return MixedCovariateMatrix(self.continuous[idx], self.binary[idx], self.metric_context)

    def with_rows(self, continuous, binary) -> "MixedCovariateMatrix":
        """Append rows, keeping the metric context fixed."""
        c = np.vstack([self.continuous, np.asarray(continuous, dtype=float).reshape(-1, self.m_c)])
        b = np.vstack([self.binary, np.asarray(binary).reshape(-1, self.m_b)])
        return MixedCovariateMatrix(c, b, self.metric_context)


@dataclass(frozen=True)
class NggParams:
    kappa: float
    sigma: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ConfigError(f"ngg.kappa must be > 0, got {self.kappa}")
        if not 0 <= self.sigma < 1:
            raise ConfigError(f"ngg.sigma must lie in [0, 1), got {self.sigma}")


class Family(str, Enum):
    ONE = "ONE"
    GA = "GA"
    GB = "GB"
    GC = "GC"

    @property
    def code(self) -> int:
        return ("ONE", "GA", "GB", "GC").index(self.value)


@dataclass(frozen=True)
class SimilarityConfig:
    family: Family = Family.ONE
    lam: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(str(self.family).upper().removeprefix("FAMILY.")))
        if not self.lam > 0:
            raise ConfigError(f"similarity.lambda must be > 0, got {self.lam}")
        if not self.alpha > 0:
            raise ConfigError(f"similarity.alpha must be > 0, got {self.alpha}")

    @property
    def is_constant(self) -> bool:
        return self.family is Family.ONE


@dataclass
class ConjClusterParams:
    beta: np.ndarray
    sigma2: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")


@dataclass
class RecClusterParams:
    alpha: float
    psi: float
    sigma2: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")


@dataclass(frozen=True)
class RecurrentDataset:
    """Per-subject log gap times with one censored trailing gap.

    Arrays are padded to ``J = max(m_i + 1)`` columns. Column ``m_i`` of
    subject ``i`` is the censored occasion; ``y`` holds NaN there and beyond.
    """

    y: np.ndarray
    m: np.ndarray
    censor_bound: np.ndarray
    x_fixed: np.ndarray
    x_time: np.ndarray
    covariates: MixedCovariateMatrix | None = None
    subject_ids: tuple = ()

    def __post_init__(self):
        n = len(self.m)
        if (np.asarray(self.m) < 1).any():
            raise ValueError("every subject needs at least one observed gap")
        if not np.isfinite(self.censor_bound).all():
            raise ValueError("censoring bound must be finite (tau must exceed the observed total)")
        if self.x_fixed.shape[0] != n or self.x_time.shape[0] != n or self.y.shape[0] != n:
            raise DimensionMismatch("subject count differs across arrays")
        if self.x_time.shape[1] < self.J:
            raise DimensionMismatch("time-varying covariates missing for some occasions")
        if self.covariates is not None and self.covariates.n != n:
            raise DimensionMismatch("similarity covariates have the wrong number of rows")
        if not self.subject_ids:
            object.__setattr__(self, "subject_ids", tuple(str(i) for i in range(n)))

    @classmethod
    def from_lists(cls, y, censor_bound, x_fixed=None, x_time=None, covariates=None, subject_ids=()):
        """Build from ragged per-subject lists.

        ``x_time[i]`` must have ``len(y[i]) + 1`` rows (the censored occasion included).
        """
        n = len(y)
        m = np.array([len(v) for v in y], dtype=np.int64)
        J = int(m.max()) + 1
        Y = np.full((n, J), np.nan)
        for i, v in enumerate(y):
            Y[i, : len(v)] = v
        xf = np.zeros((n, 0)) if x_fixed is None else np.asarray(x_fixed, dtype=float).reshape(n, -1)
        if x_time is None:
            XT = np.zeros((n, J, 0))
        else:
            p2 = np.asarray(x_time[0]).reshape(len(x_time[0]), -1).shape[1]
            XT = np.zeros((n, J, p2))
            for i, rows in enumerate(x_time):
                rows = np.asarray(rows, dtype=float)
                rows = rows.reshape(rows.shape[0] if rows.ndim == 2 else -1, p2)
                if rows.shape[0] < m[i] + 1:
                    raise DimensionMismatch(f"subject {i}: time-varying covariates missing for the censored occasion")
                XT[i, : m[i] + 1] = rows[: m[i] + 1]
        return cls(Y, m, np.asarray(censor_bound, dtype=float), xf, XT, covariates, tuple(subject_ids))

    @property
    def n(self) -> int:
        return len(self.m)

    @property
    def J(self) -> int:
        return int(self.m.max()) + 1

    @property
    def p1(self) -> int:
        return self.x_fixed.shape[1]

    @property
    def p2(self) -> int:
        return self.x_time.shape[2]

    @property
    def occasions(self) -> np.ndarray:
        """Number of modelled occasions per subject, ``m_i + 1``."""
        return self.m + 1

    def observed(self, i) -> np.ndarray:
        return self.y[i, : self.m[i]]

    def subset(self, idx) -> "RecurrentDataset":
        idx = np.asarray(idx)
        J = int(self.m[idx].max()) + 1
        cov = None if self.covariates is None else self.covariates.subset(idx)
        return RecurrentDataset(
            self.y[idx][:, :J].copy(), self.m[idx].copy(), self.censor_bound[idx].copy(),
            self.x_fixed[idx].copy(), self.x_time[idx][:, :J].copy(), cov,
            tuple(self.subject_ids[i] for i in idx),
        )


@dataclass
class RegressionState:
    beta0: np.ndarray
    beta_t: np.ndarray
    xi2: np.ndarray

    def __post_init__(self):
        if (np.asarray(self.xi2) <= 0).any():
            raise ValueError("xi2 entries must be positive")


@dataclass
class ChainState:
    partition: Partition
    cluster_params: list
    u: float
    eta: np.ndarray | None = None
    censored_y: np.ndarray | None = None
    regression: RegressionState | None = None
    extra: dict = field(default_factory=dict)

    def check(self) -> None:
        if not self.u > 0:
            raise ValueError("u must be positive")
        if len(self.cluster_params) != self.partition.k:
            raise ValueError("one parameter block per partition block required")
        if self.eta is not None and (np.nan_to_num(self.eta) < 0).any():
            raise ValueError("latent eta must be non-negative")
