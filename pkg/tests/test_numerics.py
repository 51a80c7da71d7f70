import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from labelfrugal.numerics import (ContractError, DegenerateColumnError, column_normalize,
                                  finite_diff_grad, make_rng, pairwise_sq_dists, polar_project,
                                  random_orthonormal, spawn_seeds)


def brute_sq_dists(A, B):
    out = np.zeros((A.shape[1], B.shape[1]))
    for i in range(A.shape[1]):
        for j in range(B.shape[1]):
            out[i, j] = sum((A[r, i] - B[r, j]) ** 2 for r in range(A.shape[0]))
    return out


def test_distance_of_identical_column_is_zero():
    a = np.array([[1.0], [2.0]])
    assert pairwise_sq_dists(a, a).tolist() == [[0.0]]


def test_distance_three_four_five():
    A = np.array([[0.0, 3.0], [0.0, 4.0]])
    B = np.array([[0.0], [0.0]])
    np.testing.assert_array_equal(pairwise_sq_dists(A, B), [[0.0], [25.0]])


def test_distances_match_double_loop(rng):
    A, B = rng.standard_normal((3, 4)), rng.standard_normal((3, 2))
    np.testing.assert_allclose(pairwise_sq_dists(A, B), brute_sq_dists(A, B), rtol=1e-12)


def test_distance_dimension_mismatch():
    with pytest.raises(ContractError):
        pairwise_sq_dists(np.zeros((2, 3)), np.zeros((3, 3)))


finite = st.floats(-1e3, 1e3, allow_nan=False)


@given(arrays(np.float64, (3, 5), elements=finite), arrays(np.float64, (3, 4), elements=finite))
def test_distances_nonnegative_and_symmetric(A, B):
    D = pairwise_sq_dists(A, B)
    assert D.shape == (5, 4)
    assert np.all(D >= 0)
    np.testing.assert_allclose(D, pairwise_sq_dists(B, A).T, atol=1e-6)
    assert np.all(np.diag(pairwise_sq_dists(A, A)) == 0)


def test_column_normalize_examples(rng):
    np.testing.assert_array_equal(column_normalize(np.array([[2.0], [2.0]])), [[0.5], [0.5]])
    np.testing.assert_array_equal(column_normalize(np.eye(3)), np.eye(3))
    M = column_normalize(rng.random((5, 3)))
    np.testing.assert_allclose(M.sum(axis=0), 1.0, atol=1e-12)


def test_column_normalize_rejects_zero_and_negative_columns():
    with pytest.raises(DegenerateColumnError):
        column_normalize(np.array([[0.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(ContractError):
        column_normalize(np.array([[-1.0], [2.0]]))


@given(arrays(np.float64, (4, 3), elements=st.floats(0.01, 100)))
def test_column_normalize_is_stochastic(M):
    np.testing.assert_allclose(column_normalize(M).sum(axis=0), 1.0, atol=1e-12)


def test_finite_diff_of_half_square_norm(rng):
    x = rng.standard_normal(6)
    g = finite_diff_grad(lambda v: 0.5 * np.sum(v ** 2), x)
    np.testing.assert_allclose(g, x, atol=1e-8)


def test_finite_diff_of_ortho_penalty_vanishes_at_identity():
    g = finite_diff_grad(lambda W: np.sum((W.T @ W - np.eye(3)) ** 2), np.eye(3))
    np.testing.assert_allclose(g, 0.0, atol=1e-7)


def test_make_rng_determinism_and_passthrough():
    a, b = make_rng(7), make_rng(7)
    assert a.random() == b.random()
    g = np.random.default_rng(1)
    assert make_rng(g) is g
    s1, s2 = spawn_seeds(3, 2), spawn_seeds(3, 2)
    assert [make_rng(s).random() for s in s1] == [make_rng(s).random() for s in s2]


def test_random_orthonormal_and_polar_project(rng):
    Q = random_orthonormal(5, rng)
    np.testing.assert_allclose(Q.T @ Q, np.eye(5), atol=1e-12)
    P = polar_project(Q + 0.1 * rng.standard_normal((5, 5)))
    np.testing.assert_allclose(P.T @ P, np.eye(5), atol=1e-12)
