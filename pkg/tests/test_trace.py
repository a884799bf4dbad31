import numpy as np
import pytest

from ppmx_mixt.errors import EmptyTrace
from ppmx_mixt.trace import TraceStore, file_digest


def _trace(rng, G=6, n=5):
    tr = TraceStore(n=n, param_names=("beta0", "sigma2"), meta={"model": "test"})
    for _ in range(G):
        a = rng.integers(0, 3, n)
        k = len(np.unique(a))
        tr.append(a, rng.gamma(2.0), rng.normal(size=(a.max() + 1, 2)), rng.normal(size=n),
                  beta0=rng.normal(size=2), xi2=rng.gamma(1.0, size=1))
    return tr


def test_append_canonicalizes_and_reorders_params():
    tr = TraceStore(n=4)
    tr.append([2, 2, 0, 1], 1.0, [[0.0], [1.0], [2.0]])
    np.testing.assert_array_equal(tr.allocations[0], [0, 0, 1, 2])
    np.testing.assert_array_equal(tr.params[0][:, 0], [2.0, 0.0, 1.0])


def test_round_trip_is_exact(tmp_path, rng):
    tr = _trace(rng)
    tr.save(tmp_path)
    back = TraceStore.load(tmp_path)
    assert back.n == tr.n and len(back) == len(tr)
    assert back.meta["model"] == "test"
    for a, b in zip(tr.allocations, back.allocations):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(tr.u, back.u)
    for a, b in zip(tr.params, back.params):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(tr.loglik_matrix(), back.loglik_matrix())
    np.testing.assert_array_equal(tr.extra("beta0"), back.extra("beta0"))
    back.save(tmp_path / "again")
    for name in ("trace.csv", "params.csv", "loglik.csv", "extras.csv"):
        assert file_digest(tmp_path / name) == file_digest(tmp_path / "again" / name)


def test_empty_trace_errors():
    tr = TraceStore(n=3)
    with pytest.raises(EmptyTrace):
        tr.allocation_matrix()
    tr.append([0, 0, 1], 1.0)
    with pytest.raises(EmptyTrace):
        tr.loglik_matrix()
    assert tr.k_trace().tolist() == [2]
