import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_generator
from wonhamstab.numlin import (
    NonFinite,
    Subspace,
    expm,
    is_hurwitz,
    numerical_rank,
    orthogonal_complement,
    span_grow,
)


def series_expm(M, t, terms=80):
    """Plain Taylor series; only for small |M t|."""
    M = np.asarray(M, dtype=float) * t
    term = np.eye(M.shape[0])
    out = term.copy()
    for k in range(1, terms):
        term = term @ M / k
        out = out + term
    return out


def test_expm_zero_time_is_identity():
    M = np.array([[3.0, -1.0], [2.0, 7.0]])
    assert np.array_equal(expm(M, 0.0), np.eye(2))


def test_expm_symmetric_two_state():
    G = np.array([[-1.0, 1.0], [1.0, -1.0]])
    a, b = (1 + math.exp(-2)) / 2, (1 - math.exp(-2)) / 2
    closed = np.array([[a, b], [b, a]])
    assert np.allclose(closed, series_expm(G, 1.0), atol=1e-14)
    assert np.allclose(expm(G, 1.0), closed, atol=1e-14)
    assert abs(expm(G, 1.0)[0, 0] - 0.5676676) < 1e-7


def test_expm_diagonal():
    assert np.allclose(expm(np.diag([-1.0, -2.0]), 1.0), np.diag([math.exp(-1), math.exp(-2)]), atol=1e-15)


def test_expm_matches_series_on_random_generators():
    rng = np.random.default_rng(1)
    for _ in range(20):
        G = random_generator(rng, int(rng.integers(2, 7)))
        t = rng.uniform(0, 1)
        assert np.allclose(expm(G, t), series_expm(G, t), atol=1e-12)


def test_expm_non_finite():
    with pytest.raises(NonFinite):
        expm(np.array([[np.nan]]), 1.0)
    with pytest.raises(NonFinite):
        expm(np.array([[1000.0]]), 10.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 2), st.floats(0, 2))
def test_expm_semigroup_and_stochastic(seed, s, t):
    rng = np.random.default_rng(seed)
    G = random_generator(rng, int(rng.integers(1, 7)))
    Es, Et, Est = expm(G, s), expm(G, t), expm(G, s + t)
    assert np.max(np.abs(Est - Es @ Et)) < 1e-8
    assert Est.min() >= -1e-12
    assert np.max(np.abs(Est.sum(axis=1) - 1)) < 1e-10


@pytest.mark.parametrize(
    "M, rank", [([[1, 2], [2, 4]], 1), (np.eye(3), 3), (np.zeros((2, 2)), 0)]
)
def test_numerical_rank_examples(M, rank):
    assert numerical_rank(M) == rank


def test_numerical_rank_invariance():
    rng = np.random.default_rng(5)
    for _ in range(30):
        k = int(rng.integers(1, 6))
        A = rng.normal(size=(6, k)) @ rng.normal(size=(k, 5))
        Q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
        r = numerical_rank(A)
        assert r == k
        assert numerical_rank(A[rng.permutation(6)][:, rng.permutation(5)]) == r
        assert numerical_rank(Q @ A) == r


def test_is_hurwitz_examples():
    assert is_hurwitz([[-2.0]]) == (True, -2.0)
    ok, top = is_hurwitz([[0.0, 1.0], [0.0, 0.0]])
    assert not ok and top == 0.0


def test_is_hurwitz_matches_dense_oracle():
    rng = np.random.default_rng(11)
    for _ in range(100):
        k = int(rng.integers(1, 9))
        M = rng.normal(size=(k, k)) - rng.uniform(0, 2) * np.eye(k)
        # characteristic-polynomial roots as an independent eigenvalue route
        top = np.max(np.roots(np.poly(M)).real)
        ok, got = is_hurwitz(M)
        if abs(top) > 1e-6:
            assert ok == (top < 0)
        assert abs(got - top) < 1e-6


def test_span_grow_examples():
    e1, e2, e3 = np.eye(3)
    S = Subspace.spanned_by([e1], 3)
    assert span_grow(S, [e1]).dim == 1
    assert span_grow(S, [e2]).dim == 2
    S = Subspace.spanned_by([np.array([1, 0, 1]) / math.sqrt(2)], 3)
    T = span_grow(S, [[0, 0, -1]])
    assert T.dim == 2
    assert T.residual(e3) < 1e-12 and T.residual([1, 0, 1]) < 1e-12
    assert T.residual(e2) > 0.99
    assert np.allclose(T.basis.T @ T.basis, np.eye(2), atol=1e-10)


def test_span_grow_contains_old_space():
    rng = np.random.default_rng(3)
    for _ in range(30):
        d = int(rng.integers(1, 8))
        S = Subspace.spanned_by(rng.normal(size=(int(rng.integers(0, d + 1)), d)), d)
        T = span_grow(S, rng.normal(size=(3, d)))
        assert T.dim >= S.dim
        assert T.contains_subspace(S, atol=1e-10)
        assert np.allclose(T.basis.T @ T.basis, np.eye(T.dim), atol=1e-10)


def test_orthogonal_complement_examples():
    S = Subspace.spanned_by([[1, 1]], 2)
    C = orthogonal_complement(S)
    assert C.dim == 1
    assert np.allclose(np.abs(C.basis[:, 0]), [1 / math.sqrt(2)] * 2)
    assert C.basis[0, 0] * C.basis[1, 0] < 0
    assert orthogonal_complement(Subspace.full(3)).dim == 0
    assert orthogonal_complement(Subspace.zero(3)).dim == 3


def test_complement_dimensions_and_orthogonality():
    rng = np.random.default_rng(4)
    for _ in range(50):
        d = int(rng.integers(1, 9))
        S = Subspace.spanned_by(rng.normal(size=(int(rng.integers(0, d + 1)), d)), d)
        C = orthogonal_complement(S)
        assert S.dim + C.dim == d
        if S.dim and C.dim:
            assert np.max(np.abs(S.basis.T @ C.basis)) < 1e-10
