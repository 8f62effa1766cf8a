import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustpulse.algebra import (
    InvalidDimension,
    InvalidShape,
    PAULI,
    SubspaceProjection,
    frobenius_norm,
    generator_basis,
    is_hermitian,
    is_unitary,
    matrix_exp,
    pauli_string,
    project,
)

from conftest import random_hermitian


def test_su2_basis_is_pauli():
    B = generator_basis(2)
    assert len(B) == 3
    for g, s in zip(B.generators, "XYZ"):
        np.testing.assert_array_equal(g, PAULI[s])
    np.testing.assert_allclose(B.gram(), 2 * np.eye(3), atol=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6, 8])
def test_basis_orthonormal_traceless_hermitian(n):
    B = generator_basis(n)
    assert len(B) == n * n - 1
    for g in B.generators:
        assert is_hermitian(g)
        assert abs(np.trace(g)) < 1e-12
    assert np.max(np.abs(B.gram() - n * np.eye(n * n - 1))) < 1e-12


def test_su4_uses_pauli_strings():
    B = generator_basis(4)
    assert len(B) == 15
    assert "II" not in B.labels
    np.testing.assert_array_equal(B[B.labels.index("ZZ")], pauli_string("ZZ"))


def test_basis_coefficients_reconstruct():
    B = generator_basis(3)
    c = np.arange(1, 9) / 3.0
    A = sum(ci * g for ci, g in zip(c, B.generators))
    np.testing.assert_allclose(B.coefficients(A), c, atol=1e-12)


@pytest.mark.parametrize("n", [0, 1, -3, 2.5])
def test_basis_rejects_bad_dimension(n):
    with pytest.raises(InvalidDimension):
        generator_basis(n)


def test_frobenius_examples():
    assert frobenius_norm(np.eye(4)) == pytest.approx(2.0, abs=1e-15)
    assert frobenius_norm(pauli_string("ZZ")) == pytest.approx(2.0, abs=1e-15)
    assert frobenius_norm(np.zeros((3, 3))) == 0.0


def test_frobenius_rejects_non_square():
    with pytest.raises(InvalidShape):
        frobenius_norm(np.zeros((2, 3)))


def test_matrix_exp_examples():
    np.testing.assert_allclose(matrix_exp(np.zeros((3, 3))), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(matrix_exp(-1j * np.pi / 2 * PAULI["X"]), -1j * PAULI["X"], atol=1e-14)
    U = matrix_exp(-1j * np.pi / 4 * pauli_string("ZZ"))
    w = np.exp(-1j * np.pi / 4)
    np.testing.assert_allclose(U, np.diag([w, w.conj(), w.conj(), w]), atol=1e-14)


def test_matrix_exp_non_normal_matches_series():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    np.testing.assert_allclose(matrix_exp(A), [[1, 1], [0, 1]], atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 6), seed=st.integers(0, 2**31 - 1), scale=st.floats(0.01, 10.0))
def test_matrix_exp_inverse(n, seed, scale):
    H = random_hermitian(np.random.default_rng(seed), n)
    H *= scale / np.linalg.norm(H, 2)
    U = matrix_exp(1j * H)
    assert is_unitary(U, atol=1e-10)
    np.testing.assert_allclose(U @ matrix_exp(-1j * H), np.eye(n), atol=1e-10)


def test_project_examples(rng):
    A = random_hermitian(rng, 4)
    np.testing.assert_array_equal(project(SubspaceProjection.identity(4), A), A)
    P = SubspaceProjection.levels(4, [0, 1])
    np.testing.assert_allclose(project(P, np.diag([0.0, 1, 2, 3])), np.diag([0.0, 1]))
    leak = np.zeros((4, 4), dtype=complex)
    leak[2:, :] = rng.normal(size=(2, 4))
    assert np.all(project(P, leak, single_sided=True) == 0)
    assert project(P, leak, single_sided=True).shape == (2, 4)


def test_project_dimension_mismatch():
    with pytest.raises(InvalidShape):
        project(SubspaceProjection.identity(2), np.eye(3))


def test_projection_validation():
    with pytest.raises(InvalidShape):
        SubspaceProjection(np.eye(3)[:, :2])
    with pytest.raises(ValueError):
        SubspaceProjection(2 * np.eye(2))
    P = SubspaceProjection.levels(5, [0, 1])
    assert (P.D, P.n) == (2, 5)
    np.testing.assert_allclose(P.P @ P.P.conj().T, np.eye(2))


def test_pauli_string_bad_label():
    with pytest.raises(ValueError):
        pauli_string("XQ")
