import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multift.channels import random_channel, random_density, random_unitary
from multift.opstate import Superoperator, devectorize, matrix_unit, op_inner, vectorize


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4))
def test_vectorize_roundtrip(seed, d):
    A = np.random.default_rng(seed).normal(size=(d, d)) * 1j + 1.0
    assert np.allclose(devectorize(vectorize(A)), A)


def test_op_inner_is_hilbert_schmidt(rng):
    A = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    B = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    assert op_inner(A, B) == pytest.approx(np.trace(A.conj().T @ B))
    assert op_inner(A, B) == pytest.approx(np.conj(op_inner(B, A)))


def test_matrix_unit_inner_products():
    # (Pi_ij | Pi_kl) = delta_ik delta_jl
    for i, j, k, l in [(0, 1, 0, 1), (0, 1, 1, 0), (1, 1, 1, 1)]:
        val = op_inner(matrix_unit(2, i, j), matrix_unit(2, k, l))
        assert val == pytest.approx(1.0 if (i, j) == (k, l) else 0.0)


def test_unitary_superoperator_preserves_inner(rng):
    U = random_unitary(3, 5)
    S = Superoperator.from_unitary(U)
    A = random_density(3, rng)
    assert np.allclose(S.apply(A), U @ A @ U.conj().T, atol=1e-13)
    assert S.is_trace_preserving()
    assert S.is_completely_positive()


def test_adjoint_is_hs_adjoint(rng):
    S = random_channel(3, 3, 11)
    A = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    B = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    lhs = op_inner(A, S.apply(B))
    rhs = op_inner(S.adjoint().apply(A), B)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_compose_matches_sequential_apply(rng):
    S1 = random_channel(2, 2, 1)
    S2 = random_channel(2, 2, 2)
    A = random_density(2, rng)
    assert np.allclose(S2.compose(S1).apply(A), S2.apply(S1.apply(A)), atol=1e-13)


def test_choi_detects_positive_map(rng):
    S = random_channel(2, 2, 3)
    assert S.choi_min_eigenvalue() >= -1e-12
    # transposition is positive but not completely positive
    T = Superoperator(
        np.eye(4)[:, [0, 2, 1, 3]].astype(complex), 2, 2
    )
    assert T.choi_min_eigenvalue() < -0.4


def test_matrix_element_definition(rng):
    S = random_channel(2, 2, 4)
    A = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    B = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    assert S.matrix_element(A, B) == pytest.approx(op_inner(A, S.apply(B)))
