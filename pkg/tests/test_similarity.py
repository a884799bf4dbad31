import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from ppmx_mixt.core import MixedCovariateMatrix, SimilarityConfig
from ppmx_mixt.errors import DegenerateCovariates, DimensionMismatch, EmptySet
from ppmx_mixt.similarity import (calibrate_lambda, compactness, compactness_increment, distance,
                                  frechet_centroid, log_similarity, log_similarity_ratio, similarity)


def ident(c=None, b=None):
    return MixedCovariateMatrix.from_arrays(c, b, metric="identity")


def test_distance_identical_rows_zero():
    X = ident(np.array([[1.0, 2.0]]), np.array([[1, 0]]))
    assert distance(X.row(0), X.row(0), X) == 0.0


def test_distance_binary_only():
    X = ident(None, np.array([[1, 0], [0, 0]]))
    assert distance(X.row(0), X.row(1), X) == pytest.approx(0.5)


def test_distance_mixed_345():
    X = ident(np.array([[0.0, 0.0], [3.0, 4.0]]), np.array([[1, 0], [1, 0]]))
    assert distance(X.row(0), X.row(1), X) == pytest.approx(2.5)


def test_distance_dimension_check():
    X = ident(np.zeros((2, 2)), None)
    with pytest.raises(DimensionMismatch):
        distance((np.zeros(3), []), (np.zeros(2), []), X)


@given(st.integers(0, 10_000))
def test_distance_symmetric(seed):
    r = np.random.default_rng(seed)
    X = MixedCovariateMatrix.from_arrays(r.standard_normal((6, 2)), r.integers(0, 2, (6, 3)))
    d01 = distance(X.row(0), X.row(1), X)
    assert d01 == pytest.approx(distance(X.row(1), X.row(0), X))
    assert d01 >= 0


def test_centroid_single_row():
    X = ident(np.array([[1.5, -2.0]]), np.array([[1, 0, 1]]))
    c, b = frechet_centroid([0], X)
    np.testing.assert_allclose(c, [1.5, -2.0])
    assert b.tolist() == [1, 0, 1]


def test_centroid_doubled_point():
    X = ident(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]), None)
    c, _ = frechet_centroid([0, 1, 2], X)
    np.testing.assert_allclose(c, [0.0, 0.0], atol=1e-9)


def test_centroid_binary_majority_and_tie():
    X = ident(None, np.array([[1, 1], [1, 0], [1, 1], [0, 0], [0, 0]]))
    _, b = frechet_centroid(range(5), X)
    assert b.tolist() == [1, 0]
    _, b = frechet_centroid([0, 3], X)
    assert b.tolist() == [0, 0]


def test_centroid_empty():
    with pytest.raises(EmptySet):
        frechet_centroid([], ident(np.zeros((2, 1))))


def test_compactness_trivial_cases():
    X = ident(np.array([[1.0], [1.0], [-1.0], [1.0]]))
    assert compactness([2], X).d_total == 0.0
    assert compactness([0, 1], X).d_total == pytest.approx(0.0, abs=1e-12)


def test_compactness_two_points_line():
    X = ident(np.array([[-1.0], [1.0]]))
    grid = np.linspace(-2, 2, 4001)
    brute = np.min(np.abs(grid + 1) + np.abs(grid - 1))
    assert compactness([0, 1], X).d_total == pytest.approx(brute, abs=1e-9)
    assert brute == pytest.approx(2.0)


def _objective(Z, c):
    return np.sqrt(((Z - c) ** 2).sum(1)).sum()


@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 2))
def test_centroid_matches_brute_force(seed, size, dim):
    r = np.random.default_rng(seed)
    C = r.standard_normal((size, dim))
    if size > 2 and r.random() < 0.3:
        C[1] = C[0]
    X = MixedCovariateMatrix.from_arrays(C, None, metric="identity")
    c, _ = frechet_centroid(range(size), X)
    # multistart Nelder-Mead oracle plus every data point
    best = min(_objective(C, p) for p in C)
    for start in list(C) + [C.mean(0)]:
        res = minimize(lambda v: _objective(C, v), start, method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 20000})
        best = min(best, res.fun)
    assert _objective(C, c) <= best + 1e-6


def test_centroid_at_data_point_converges():
    # median sits exactly on the second row, where plain Weiszfeld steps crawl
    C = np.array([[-1.06320156, 0.48270243], [-0.54415786, -0.5628266],
                  [1.4219777, -1.09100809], [-2.12180121, -0.14032102]])
    X = MixedCovariateMatrix.from_arrays(C, None, metric="identity")
    c, _ = frechet_centroid(range(4), X)
    np.testing.assert_allclose(c, C[1], atol=1e-12)


@pytest.mark.parametrize("fam,lam,alpha,D,expected", [
    ("GC", 3.0, 1.0, 0.0, 1.0),
    ("GC", 1.0, 1.0, 1.0, 0.5),
    ("GA", 1.0, 1.0, 1.0, math.exp(-1.0)),
    ("GB", 1.0, 2.0, 1.0, 0.25),
    ("ONE", 1.0, 1.0, 17.0, 1.0),
])
def test_similarity_values(fam, lam, alpha, D, expected):
    assert similarity(D, SimilarityConfig(fam, lam, alpha)) == pytest.approx(expected, rel=1e-12)


@given(st.sampled_from(["GA", "GB", "GC", "ONE"]), st.floats(0.01, 5), st.floats(0.1, 3),
       st.lists(st.floats(0, 1e4), min_size=2, max_size=20))
def test_similarity_bounds_and_monotone(fam, lam, alpha, Ds):
    cfg = SimilarityConfig(fam, lam, alpha)
    vals = [log_similarity(D, cfg) for D in sorted(Ds)]
    assert all(v <= 0 for v in vals)
    assert all(np.isfinite(vals))
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


def test_log_similarity_no_underflow():
    assert np.isfinite(log_similarity(1e6, SimilarityConfig("GC", 1.0)))


def test_ratio_identical_item_is_zero():
    X = ident(np.array([[1.0, 2.0]] * 4), np.array([[1, 0]] * 4))
    assert log_similarity_ratio([0, 1, 2], 3, X, SimilarityConfig("GC", 1.0)) == pytest.approx(0.0, abs=1e-9)


def test_ratio_empty_block_is_zero():
    X = ident(np.array([[0.0], [5.0]]))
    assert log_similarity_ratio([], 1, X, SimilarityConfig("GC", 1.0)) == 0.0


def test_ratio_worked_example():
    # {0, 0, 3}: the median sits at 0, so D' = 3 and log g_C = -3 log 4
    X = ident(np.array([[0.0], [0.0], [3.0]]))
    grid = np.linspace(-1, 4, 50001)
    D_brute = np.min(2 * np.abs(grid) + np.abs(grid - 3))
    val = log_similarity_ratio([0, 1], 2, X, SimilarityConfig("GC", 1.0))
    assert val == pytest.approx(-D_brute * math.log1p(D_brute), abs=1e-6)
    assert val == pytest.approx(-3 * math.log(4), abs=1e-9)


@given(st.integers(0, 10_000))
def test_compactness_monotone_under_addition(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(3, 12))
    X = MixedCovariateMatrix.from_arrays(r.standard_normal((n, 2)), r.integers(0, 2, (n, 2)))
    size = int(r.integers(1, n))
    perm = r.permutation(n)
    assert compactness_increment(perm[:size], int(perm[size]), X) >= -1e-9


@pytest.mark.parametrize("eps", [0.5, 1.0, 1.5, 2.0, 2.5])
def test_ratio_shapes_over_t(eps):
    t = np.linspace(0.01, 1.99, 60)

    def ratio(fam, alpha=1.0):
        cfg = SimilarityConfig(fam, 1.0, alpha)
        return np.array([log_similarity(x + eps, cfg) - log_similarity(x, cfg) for x in t])

    assert np.all(np.diff(ratio("GC")) < 0)
    np.testing.assert_allclose(ratio("GA"), -eps, atol=1e-12)
    assert np.all(np.diff(ratio("GB")) > 0)


def test_calibrate_degenerate():
    X = ident(np.ones((6, 2)), np.zeros((6, 1), dtype=int))
    with pytest.raises(DegenerateCovariates):
        calibrate_lambda(X, 0.1, n_mc=3, rng=0)


def test_calibrate_definitional_ratio(rng):
    X = MixedCovariateMatrix.from_arrays(rng.standard_normal((15, 2)), rng.integers(0, 2, (15, 1)))
    lam, eps_hat = calibrate_lambda(X, 0.1, n_mc=5, rng=1, return_increment=True)
    assert lam * eps_hat == pytest.approx(0.1)
    assert calibrate_lambda(X, 0.1, n_mc=5, rng=1) == lam


def test_calibrate_collinear_constant_increment():
    # two identical rows plus one row at distance 2: every increment is 2 or 0
    X = ident(np.array([[0.0], [0.0], [2.0]]))
    lam, eps_hat = calibrate_lambda(X, 0.1, n_mc=400, rng=3, return_increment=True)
    # only size-2 blocks; adding the far point to {0,0} costs 2, adding 0 to {0,2} costs 0
    assert eps_hat == pytest.approx(2.0 / 3.0, abs=0.1)
