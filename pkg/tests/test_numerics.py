import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from omic.numerics import (
    LowRankFactor,
    SparseObservations,
    SparsePlusLowRank,
    factor_diff_norm,
    frobenius_norm,
    nuclear_norm,
    splr_mul_left,
    splr_mul_right,
    truncated_svd,
)


def _random_splr(rng, m, n, density=0.05, r=3):
    S = sparse.random(m, n, density=density, random_state=rng, format="csr")
    U, _ = np.linalg.qr(rng.standard_normal((m, r)))
    V, _ = np.linalg.qr(rng.standard_normal((n, r)))
    d = np.sort(rng.random(r))[::-1]
    return SparsePlusLowRank(S, LowRankFactor(U, d, V))


def test_svd_of_diagonal():
    f = truncated_svd(np.diag([3.0, 1.0]), 2)
    np.testing.assert_allclose(f.d, [3, 1])
    np.testing.assert_allclose(np.abs(f.U), np.eye(2), atol=1e-12)
    np.testing.assert_allclose(np.abs(f.V), np.eye(2), atol=1e-12)


def test_svd_of_outer_product(rng):
    u, v = rng.standard_normal(6), rng.standard_normal(4)
    f = truncated_svd(np.outer(u, v), 1)
    assert f.d[0] == pytest.approx(np.linalg.norm(u) * np.linalg.norm(v))


def test_svd_reconstruction_against_eigensolver(rng):
    A = rng.standard_normal((20, 15))
    f = truncated_svd(A, 15)
    assert np.linalg.norm(f.to_dense() - A) <= 1e-8
    evals = np.sort(np.linalg.eigvalsh(A.T @ A))[::-1]
    np.testing.assert_allclose(f.d**2, evals, rtol=1e-9, atol=1e-9)


def test_svd_sign_convention_and_orthonormality(rng):
    A = rng.standard_normal((12, 9))
    f = truncated_svd(A, 5)
    assert np.abs(f.U.T @ f.U - np.eye(5)).max() <= 1e-10
    assert np.abs(f.V.T @ f.V - np.eye(5)).max() <= 1e-10
    assert np.all(np.diff(f.d) <= 0)
    for col in f.U.T:
        assert col[np.argmax(np.abs(col))] > 0
    g = truncated_svd(A.copy(), 5)
    np.testing.assert_array_equal(f.U, g.U)


def test_svd_optimal_residual(rng):
    A = rng.standard_normal((10, 8))
    s = np.linalg.svd(A, compute_uv=False)
    f = truncated_svd(A, 3)
    assert np.linalg.norm(A - f.to_dense()) == pytest.approx(np.sqrt((s[3:] ** 2).sum()))


def test_svd_rejects_bad_input():
    with pytest.raises(ValueError):
        truncated_svd(np.array([[1.0, np.nan]]), 1)
    with pytest.raises(ValueError):
        truncated_svd(np.eye(2), 3)


def test_splr_identity_operator(rng):
    n = 6
    Z = SparsePlusLowRank(sparse.csr_matrix((n, n)), LowRankFactor(np.eye(n), np.ones(n), np.eye(n)))
    W = rng.standard_normal((n, 3))
    np.testing.assert_allclose(splr_mul_right(Z, W), W)
    np.testing.assert_allclose(splr_mul_left(Z, W), W)


def test_splr_sparse_only(rng):
    Z = _random_splr(rng, 8, 5, density=0.4)
    Z = SparsePlusLowRank(Z.sparse, LowRankFactor(Z.lowrank.U, np.zeros(3), Z.lowrank.V))
    e = np.zeros((5, 1))
    e[2] = 1
    np.testing.assert_allclose(splr_mul_right(Z, e)[:, 0], Z.sparse.toarray()[:, 2])
    W = rng.standard_normal((8, 2))
    np.testing.assert_allclose(splr_mul_left(Z, W), Z.sparse.toarray().T @ W)


def test_splr_matches_dense(rng):
    Z = _random_splr(rng, 50, 40)
    D = Z.to_dense()
    W = rng.standard_normal((40, 4))
    assert np.linalg.norm(splr_mul_right(Z, W) - D @ W) <= 1e-10 * max(1, np.linalg.norm(D @ W))
    W = rng.standard_normal((50, 4))
    assert np.linalg.norm(splr_mul_left(Z, W) - D.T @ W) <= 1e-10 * max(1, np.linalg.norm(D.T @ W))


def test_splr_dimension_mismatch(rng):
    Z = _random_splr(rng, 10, 7)
    with pytest.raises(ValueError):
        splr_mul_right(Z, np.ones((6, 2)))
    with pytest.raises(ValueError):
        splr_mul_left(Z, np.ones((7, 2)))


@settings(max_examples=40, deadline=None)
@given(
    m=st.integers(1, 100),
    n=st.integers(1, 100),
    r=st.integers(1, 5),
    seed=st.integers(0, 2**31 - 1),
)
def test_splr_product_property(m, n, r, seed):
    rng = np.random.default_rng(seed)
    k = min(r, m, n)
    Z = _random_splr(rng, m, n, density=0.1, r=k)
    W = rng.standard_normal((n, 3))
    expected = Z.to_dense() @ W
    assert np.linalg.norm(splr_mul_right(Z, W) - expected) <= 1e-10 * max(1.0, np.linalg.norm(expected))


def test_nuclear_norm_examples(rng):
    assert nuclear_norm(np.diag([3.0, 1.0])) == pytest.approx(4.0)
    assert nuclear_norm(np.zeros((3, 4))) == 0.0
    A = rng.standard_normal((10, 8))
    w, Q = np.linalg.eigh(A.T @ A)
    root = Q @ np.diag(np.sqrt(np.clip(w, 0, None))) @ Q.T
    assert nuclear_norm(A) == pytest.approx(np.trace(root), abs=1e-8)


@settings(max_examples=30, deadline=None)
@given(m=st.integers(1, 12), n=st.integers(1, 12), seed=st.integers(0, 10**6))
def test_nuclear_dominates_frobenius(m, n, seed):
    A = np.random.default_rng(seed).standard_normal((m, n))
    assert nuclear_norm(A) >= frobenius_norm(A) - 1e-12


def test_observations_validation_and_duplicates():
    obs = SparseObservations((2, 3), [0, 0, 1], [1, 1, 2], [1.0, 3.0, 2.0])
    rows, cols, sums, counts = obs.aggregate()
    np.testing.assert_array_equal(rows, [0, 1])
    np.testing.assert_array_equal(sums, [4.0, 2.0])
    np.testing.assert_array_equal(counts, [2, 1])
    assert obs.max_multiplicity == 2
    assert obs.to_csr()[0, 1] == 4.0
    with pytest.raises(ValueError):
        SparseObservations((2, 2), [2], [0], [1.0])
    with pytest.raises(ValueError):
        SparseObservations((2, 2), [0], [0], [np.inf])


def test_factor_invariants():
    with pytest.raises(ValueError):
        LowRankFactor(np.eye(3)[:, :2], np.array([1.0]), np.eye(3)[:, :2])
    with pytest.raises(ValueError):
        LowRankFactor(np.eye(3)[:, :2], np.array([1.0, -2.0]), np.eye(3)[:, :2])
    assert LowRankFactor(np.eye(3)[:, :2], np.ones(2), np.eye(3)[:, :2]).orthonormality_error() == 0
    assert LowRankFactor(np.ones((3, 1)), np.ones(1), np.eye(3)[:, :1]).orthonormality_error() == 2


def test_factor_entries_and_diff(rng):
    f = truncated_svd(rng.standard_normal((9, 7)), 3)
    g = truncated_svd(rng.standard_normal((9, 7)), 2)
    D = f.to_dense()
    rows, cols = rng.integers(0, 9, 20), rng.integers(0, 7, 20)
    np.testing.assert_allclose(f.entries(rows, cols), D[rows, cols])
    assert factor_diff_norm(f, g) == pytest.approx(np.linalg.norm(D - g.to_dense()), rel=1e-9)
    cat = LowRankFactor.concat([f, g], 9, 7)
    np.testing.assert_allclose(cat.to_dense(), D + g.to_dense(), atol=1e-12)
