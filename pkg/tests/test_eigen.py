import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import charpoly_eigenvalues
from ntklab.eigen import _round_robin, jacobi_eigh, sym_eigen
from ntklab.errors import ConfigError


class TestExamples:
    def test_identity(self):
        np.testing.assert_allclose(sym_eigen(np.eye(3)), [1, 1, 1])

    def test_diagonal(self):
        np.testing.assert_allclose(sym_eigen(np.diag([4.0, 1.0])), [1, 4])

    def test_two_by_two(self):
        np.testing.assert_allclose(sym_eigen([[2.0, 1.0], [1.0, 2.0]]), [1, 3], atol=1e-14)

    def test_non_symmetric_rejected(self):
        with pytest.raises(ConfigError):
            sym_eigen([[1.0, 2.0], [0.0, 1.0]])

    def test_one_by_one(self):
        assert sym_eigen([[5.0]])[0] == 5.0


def test_round_robin_covers_every_pair_once():
    for m in range(2, 12):
        pairs = [(int(p), int(q)) for ps, qs in _round_robin(m) for p, q in zip(ps, qs)]
        assert sorted(pairs) == [(i, j) for i in range(m) for j in range(i + 1, m)]
        for ps, qs in _round_robin(m):
            idx = list(ps) + list(qs)
            assert len(set(idx)) == len(idx)


def test_characteristic_polynomial_oracle():
    rng = np.random.default_rng(0)
    for k in range(100):
        n = 2 + k % 2
        a = rng.uniform(-5, 5, (n, n))
        a = (a + a.T) / 2
        assert np.max(np.abs(sym_eigen(a) - charpoly_eigenvalues(a.tolist()))) <= 1e-8


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=2, max_value=24), st.integers(min_value=0, max_value=2**32 - 1))
def test_matches_lapack_and_reconstructs(m, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, m))
    a = a + a.T
    w, v = jacobi_eigh(a)
    scale = np.linalg.norm(a)
    np.testing.assert_allclose(w, np.linalg.eigvalsh(a), atol=1e-10 * scale)
    np.testing.assert_allclose(v @ np.diag(w) @ v.T, a, atol=1e-10 * scale)
    np.testing.assert_allclose(v.T @ v, np.eye(m), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 6), elements=st.floats(-3, 3)))
def test_gram_matrices_are_psd(g):
    w = sym_eigen(g @ g.T)
    assert w[0] >= -1e-8 * max(w[-1], 1.0)
    assert np.all(np.diff(w) >= 0)
