import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import triple_loop_matmul
from ddse.linalg import (
    ConvergenceError,
    ShapeError,
    jacobi_eigh,
    make_rng,
    matmul,
    matvec,
    spectral_norm,
    symmetric_eigh,
)


def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(np.eye(2), a), a)


def test_matmul_annihilation():
    out = matmul(np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[0.0], [5.0]]))
    np.testing.assert_array_equal(out, [[0.0], [0.0]])


def test_matmul_matches_triple_loop(rng):
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    np.testing.assert_allclose(matmul(a, b), triple_loop_matmul(a, b), rtol=1e-14, atol=1e-14)


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_matvec_examples(rng):
    np.testing.assert_array_equal(matvec(np.eye(3), np.array([1.0, 2.0, 3.0])), [1, 2, 3])
    v = rng.standard_normal(4)
    np.testing.assert_array_equal(matvec(np.zeros((3, 4)), v), np.zeros(3))
    a = rng.standard_normal((5, 7))
    v = rng.standard_normal(7)
    oracle = np.array([sum(a[i, j] * v[j] for j in range(7)) for i in range(5)])
    np.testing.assert_allclose(matvec(a, v), oracle, rtol=1e-13, atol=1e-14)
    with pytest.raises(ShapeError):
        matvec(a, np.zeros(5))


def test_spectral_norm_examples(rng):
    assert spectral_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0, rel=1e-9)
    assert spectral_norm(np.eye(4)) == pytest.approx(1.0, rel=1e-9)
    a = rng.standard_normal((4, 6))
    oracle = np.linalg.svd(a, compute_uv=False)[0]
    assert abs(spectral_norm(a) - oracle) < 1e-8


def test_spectral_norm_nonconvergence_carries_iterate(rng):
    a = rng.standard_normal((5, 5))
    with pytest.raises(ConvergenceError) as info:
        spectral_norm(a, tol=0.0, max_iter=3)
    assert info.value.last_iterate is not None


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50).filter(lambda x: abs(x) > 1e-3))
def test_spectral_norm_homogeneous(seed, alpha):
    a = make_rng(seed).standard_normal((4, 3))
    assert spectral_norm(alpha * a) == pytest.approx(abs(alpha) * spectral_norm(a), rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matmul_associative(seed):
    r = make_rng(seed)
    a, b, c = r.standard_normal((3, 4)), r.standard_normal((4, 5)), r.standard_normal((5, 2))
    left = matmul(matmul(a, b), c)
    right = matmul(a, matmul(b, c))
    assert np.linalg.norm(left - right) <= 1e-9 * np.linalg.norm(left)


def test_eigh_diagonal():
    w, q = symmetric_eigh(np.diag([2.0, 5.0]))
    np.testing.assert_allclose(w, [5.0, 2.0])
    # signed permutation of the identity
    np.testing.assert_allclose(np.abs(q), [[0.0, 1.0], [1.0, 0.0]])


def test_eigh_identity():
    w, _ = symmetric_eigh(np.eye(3))
    np.testing.assert_allclose(w, [1.0, 1.0, 1.0])


@pytest.mark.parametrize("solver", [symmetric_eigh, jacobi_eigh])
def test_eigh_reconstruction(rng, solver):
    b = rng.standard_normal((6, 6))
    a = b + b.T
    w, q = solver(a)
    assert np.all(np.diff(w) <= 0)
    scale = np.linalg.norm(a)
    assert np.max(np.abs(q @ np.diag(w) @ q.T - a)) < 1e-8 * scale
    assert np.max(np.abs(q.T @ q - np.eye(6))) < 1e-8
    assert np.max(np.abs(a @ q - q * w)) < 1e-8 * np.linalg.norm(a, 2)


def test_lapack_eigenvalues_match_jacobi(rng):
    b = rng.standard_normal((8, 8))
    a = b @ b.T
    np.testing.assert_allclose(symmetric_eigh(a)[0], jacobi_eigh(a)[0], rtol=1e-10, atol=1e-10)


def test_eigh_rejects_asymmetric():
    with pytest.raises(ShapeError):
        symmetric_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ShapeError):
        symmetric_eigh(np.zeros((2, 3)))


def test_rng_is_reproducible():
    a = make_rng(7).random(5)
    b = make_rng(7).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(make_rng(7, 1).random(5), make_rng(7, 2).random(5))
