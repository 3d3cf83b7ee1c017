import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from inertial_bvp.errors import DegeneracyError, InputError
from inertial_bvp.linalg import eig_real_parts, householder_apply, qr_oracle
from inertial_bvp.problems import fd_jacobian, two_layer_lorenz


def test_reflector_about_e1():
    out = householder_apply(np.array([1.0, 0.0]), np.eye(2))
    assert np.allclose(out, np.diag([-1.0, 1.0]))


def test_reflector_diagonal_vector():
    v = np.array([1.0, 1.0]) / np.sqrt(2)
    assert np.allclose(householder_apply(v, np.eye(2)), [[0, -1], [-1, 0]])


def test_matches_dense_product_both_sides():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(5, 5))
    v = rng.normal(size=5)
    v /= np.linalg.norm(v)
    H = np.eye(5) - 2 * np.outer(v, v)
    assert np.allclose(householder_apply(v, M), H @ M, atol=1e-14)
    assert np.allclose(householder_apply(v, M, side="right"), M @ H, atol=1e-14)


def test_non_unit_vector_rejected():
    with pytest.raises(InputError):
        householder_apply(np.array([1.0, 1.0]), np.eye(2))
    with pytest.raises(InputError):
        householder_apply(np.array([1.0, 0.0]), np.eye(2), side="top")


def test_qr_identity_and_triangular():
    Q, R = qr_oracle(np.eye(3))
    assert np.allclose(Q, np.eye(3)) and np.allclose(R, np.eye(3))
    M = np.triu(np.arange(1.0, 10.0).reshape(3, 3)) + np.eye(3)
    Q, R = qr_oracle(M)
    assert np.allclose(Q, np.eye(3)) and np.allclose(R, M)


@settings(max_examples=30, deadline=None)
@given(arrays(float, (6, 6), elements=st.floats(-3, 3)), st.lists(st.sampled_from([-1, 1]), min_size=6, max_size=6))
def test_qr_reconstructs_with_signs(M, signs):
    M = M + 7 * np.eye(6)  # keep it well away from rank deficiency
    Q, R = qr_oracle(M, signs)
    assert np.max(np.abs(Q @ R - M)) < 1e-10
    assert np.max(np.abs(Q.T @ Q - np.eye(6))) < 1e-12
    assert np.allclose(np.tril(R, -1), 0)
    assert np.array_equal(np.sign(np.diag(R)), np.asarray(signs, dtype=float))


def test_qr_rank_deficient():
    with pytest.raises(DegeneracyError):
        qr_oracle(np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_eig_real_parts_examples():
    assert np.allclose(eig_real_parts(np.diag([-10.0, -1.0])), [-1, -10])
    assert np.allclose(eig_real_parts([[0.0, 1.0], [-1.0, 0.0]]), [0, 0])
    with pytest.raises(InputError):
        eig_real_parts(np.ones((2, 3)))


def test_lorenz_origin_spectrum_against_fd_oracle():
    L = two_layer_lorenz()
    J = L.jacobian(0.0, np.zeros(L.dim))
    Jfd = fd_jacobian(L.rhs, 0.0, np.zeros(L.dim))
    a = eig_real_parts(J)
    b = np.sort(np.linalg.eig(Jfd)[0].real)[::-1]
    assert a.size == 25
    assert np.max(np.abs(a - b)) < 1e-6
