import itertools
import math
import warnings
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ppmx_mixt import _kernels as K
from ppmx_mixt.conjugate import ConjPriorConfig, ConjugateConfig, RegressionData
from ppmx_mixt.core import MixedCovariateMatrix, NggParams, Partition, SimilarityConfig
from ppmx_mixt.errors import EmptyTrace, NonFiniteCPO, SizeMismatch
from ppmx_mixt.summaries import (SplitSpec, cluster_covariate_summary, dendrogram_candidates,
                                 estimate_partition_vi, lpml, misclassification_rate, rmse_cv,
                                 similarity_matrix, vi_distance, vi_lower_bound)
from ppmx_mixt.trace import TraceStore

labels = st.lists(st.integers(0, 3), min_size=1, max_size=9)


def vi_oracle(a, b):
    n = len(a)
    ca, cb, cab = Counter(a), Counter(b), Counter(zip(a, b))
    h = lambda c: -sum(v / n * math.log(v / n) for v in c.values())
    mi = sum(v / n * math.log(v * n / (ca[x] * cb[y])) for (x, y), v in cab.items())
    return h(ca) + h(cb) - 2 * mi


def test_psm_examples():
    P = similarity_matrix([[0, 0, 1], [0, 0, 1]]).matrix
    np.testing.assert_array_equal(P, [[1, 1, 0], [1, 1, 0], [0, 0, 1]])
    P = similarity_matrix([[0, 0], [0, 1]]).matrix
    assert P[0, 1] == 0.5 and P[0, 0] == 1.0


def test_psm_permutation_equivariance(rng):
    A = rng.integers(0, 3, size=(20, 8))
    perm = rng.permutation(8)
    P = similarity_matrix(A).matrix
    Pp = similarity_matrix(A[:, perm]).matrix
    np.testing.assert_allclose(Pp, P[np.ix_(perm, perm)])


def test_empty_trace_raises():
    with pytest.raises(EmptyTrace):
        similarity_matrix(TraceStore(n=3))


def test_vi_examples():
    assert vi_distance([0, 0, 1], [5, 5, 2]) == 0.0
    assert vi_distance([0, 1, 2, 3], [0, 0, 0, 0]) == pytest.approx(math.log(4), abs=1e-12)
    with pytest.raises(SizeMismatch):
        vi_distance([0, 1], [0, 1, 1])


@given(labels, st.data())
def test_vi_matches_entropy_oracle_and_is_symmetric(a, data):
    b = data.draw(st.lists(st.integers(0, 3), min_size=len(a), max_size=len(a)))
    v = vi_distance(a, b)
    assert v == pytest.approx(vi_oracle(a, b), abs=1e-10)
    assert v == pytest.approx(vi_distance(b, a), abs=1e-12)
    assert v >= 0


@given(labels, st.data())
def test_vi_triangle_inequality(a, data):
    b = data.draw(st.lists(st.integers(0, 3), min_size=len(a), max_size=len(a)))
    c = data.draw(st.lists(st.integers(0, 3), min_size=len(a), max_size=len(a)))
    assert vi_distance(a, c) <= vi_distance(a, b) + vi_distance(b, c) + 1e-10


def test_expected_vi_kernel_and_lower_bound(rng):
    A = np.ascontiguousarray(rng.integers(0, 3, size=(30, 7)))
    C = np.ascontiguousarray(rng.integers(0, 4, size=(5, 7)))
    ev = K.expected_vi(C, A)
    P = similarity_matrix(A).matrix
    for c, e in zip(C, ev):
        assert e == pytest.approx(np.mean([vi_oracle(list(c), list(a)) for a in A]), abs=1e-10)
        assert vi_lower_bound(c, P) <= e + 1e-10


def test_estimate_exact_two_block():
    truth = [0, 0, 0, 1, 1]
    assert estimate_partition_vi([truth] * 4) == Partition(truth)
    est, loss = estimate_partition_vi([[1, 1, 2, 0, 0]] * 3, return_loss=True)
    assert est == Partition([0, 0, 1, 2, 2]) and loss == 0.0


def test_estimate_planted_three_blocks(rng):
    truth = np.repeat([0, 1, 2], [10, 12, 8])
    draws = []
    for _ in range(300):
        d = truth.copy()
        flip = rng.random(d.size) < 0.05
        d[flip] = rng.integers(0, 3, flip.sum())
        draws.append(d)
    assert estimate_partition_vi(draws) == Partition(truth)
    assert estimate_partition_vi(draws, prefilter=5) == Partition(truth)


def test_dendrogram_candidates_cover_all_sizes(rng):
    A = rng.integers(0, 3, size=(20, 9))
    cands = dendrogram_candidates(similarity_matrix(A))
    assert {int(c.max()) + 1 for c in cands} == set(range(1, 10))


def test_lpml_examples():
    total, cpo = lpml(np.log([[0.2, 0.5]]))
    assert total == pytest.approx(math.log(0.2) + math.log(0.5))
    _, cpo = lpml(np.log([[0.3], [0.3], [0.3]]))
    assert cpo[0] == pytest.approx(math.log(0.3))
    _, cpo = lpml(np.log([[1.0], [1 / 3]]))
    assert math.exp(cpo[0]) == pytest.approx(0.5)


def test_lpml_extreme_values_stay_finite():
    total, cpo = lpml(np.array([[-800.0], [-805.0]]))
    assert np.isfinite(total) and cpo[0] < -800


def test_lpml_nonfinite_warns():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        total, cpo = lpml(np.array([[0.0, -np.inf], [0.0, -np.inf]]))
    assert any(issubclass(x.category, NonFiniteCPO) for x in w)
    assert total == 0.0 and not np.isfinite(cpo[1])


def _brute_mis(est, truth):
    a, b = np.asarray(est), np.asarray(truth)
    ka, kb = a.max() + 1, b.max() + 1
    best = 0
    labs = list(range(max(ka, kb)))
    for perm in itertools.permutations(labs):
        best = max(best, sum(perm[x] == y for x, y in zip(a, b) if perm[x] < kb))
    return 1 - best / a.size


def test_misclassification_examples():
    t = np.repeat([0, 1], 100)
    assert misclassification_rate(t, t) == 0.0
    e = t.copy()
    e[0] = 1
    assert misclassification_rate(e, t) == pytest.approx(0.005)


@given(st.lists(st.integers(0, 3), min_size=2, max_size=10), st.data())
def test_misclassification_brute_force(a, data):
    b = data.draw(st.lists(st.integers(0, 3), min_size=len(a), max_size=len(a)))
    ca = Partition.from_labels(a).allocations
    cb = Partition.from_labels(b).allocations
    assert misclassification_rate(ca, cb) == pytest.approx(_brute_mis(ca, cb), abs=1e-12)


def test_rmse_cv_stubs(rng):
    y = rng.normal(size=40)
    data = RegressionData(np.ones((40, 1)), y)
    perfect = lambda tr, te, cfg, r: (te.y, te.y)
    assert rmse_cv(data, None, SplitSpec(5, 0.8), rng, perfect) == 0.0
    seen = []

    def const(tr, te, cfg, r):
        seen.append(te.y)
        return np.full(te.n, te.y.mean()), te.y

    v = rmse_cv(data, None, SplitSpec(1, 0.75), rng, const)
    assert v == pytest.approx(np.std(seen[0]))


def test_rmse_cv_direction_on_covariate_groups():
    # responses shift with a binary covariate that the g = 1 model cannot see in prediction
    r = np.random.default_rng(3)
    n = 60
    b = np.repeat([0, 1], n // 2)
    c = np.where(b == 1, 2.0, -2.0) + 0.3 * r.normal(size=n)
    y = np.where(b == 1, 3.0, -3.0) + 0.3 * r.normal(size=n)
    cov = MixedCovariateMatrix.from_arrays(c[:, None], b[:, None])
    data = RegressionData(np.ones((n, 1)), y, cov)
    prior = ConjPriorConfig.isotropic(1, B0_scale=10.0)
    errs = {}
    for fam in ("ONE", "GC"):
        cfg = ConjugateConfig(NggParams(1.0, 0.2), SimilarityConfig(fam, 1.0), prior, n_iter=400, n_burnin=200)
        errs[fam] = rmse_cv(data, cfg, SplitSpec(3, 0.9), 0)
    assert errs["GC"] < errs["ONE"]


def test_cluster_covariate_summary():
    X = MixedCovariateMatrix.from_arrays(np.array([[1.0], [3.0], [10.0]]), np.array([[1], [0], [1]]))
    rows = cluster_covariate_summary([0, 0, 1], X, ["age", "smoker"])
    assert rows[0] == {"block": 0, "size": 2, "age": 2.0, "smoker": 0.5}
    assert rows[1]["age"] == 10.0
