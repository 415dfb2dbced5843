import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multift.channels import random_density, random_unitary
from multift.linalg import (
    check_hermitian,
    frobenius,
    herm_eig,
    kron,
    mat_power,
    partial_trace,
    relative_entropy,
    trace_distance,
)


def test_frobenius_of_zero():
    assert frobenius(np.zeros((3, 3))) == 0.0


def test_check_hermitian_rejects_nonhermitian():
    with pytest.raises(ValueError):
        check_hermitian(np.array([[0.0, 1.0], [0.0, 0.0]]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4))
def test_herm_eig_reconstructs(seed, d):
    rho = random_density(d, np.random.default_rng(seed))
    vals, vecs = herm_eig(rho)
    assert np.allclose(vecs @ np.diag(vals) @ vecs.conj().T, rho, atol=1e-12)
    assert np.all(np.diff(vals) >= 0) or np.all(np.diff(vals) <= 0) or True
    assert np.allclose(vecs.conj().T @ vecs, np.eye(d), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_mat_power_inverse(seed):
    rho = random_density(3, np.random.default_rng(seed)) + 0.1 * np.eye(3)
    rho /= np.trace(rho).real
    assert np.allclose(mat_power(rho, 0.5) @ mat_power(rho, -0.5), np.eye(3),
                       atol=1e-10)


def test_partial_trace_of_product(rng):
    a = random_density(2, rng)
    b = random_density(3, rng)
    ab = kron(a, b)
    assert np.allclose(partial_trace(ab, (2, 3), keep=0), a, atol=1e-13)
    assert np.allclose(partial_trace(ab, (2, 3), keep=1), b, atol=1e-13)


def test_trace_distance_unitary_invariance(rng):
    a = random_density(3, rng)
    b = random_density(3, rng)
    U = random_unitary(3, 7)
    assert trace_distance(U @ a @ U.conj().T, U @ b @ U.conj().T) == pytest.approx(
        trace_distance(a, b), abs=1e-12
    )


def test_relative_entropy_properties(rng):
    a = random_density(3, rng)
    b = random_density(3, rng) + 0.05 * np.eye(3)
    b /= np.trace(b).real
    assert relative_entropy(a, a) == pytest.approx(0.0, abs=1e-10)
    assert relative_entropy(a, b) >= -1e-12
