import numpy as np
import pytest

from multift.channels import (
    MeasurementBasis,
    ReferencePair,
    dephasing_map,
    haar_unitary,
    petz_recovery,
    random_channel,
    random_density,
    regularize_state,
    rescaling_map,
    stinespring_channel,
    z_factor,
)
from multift.linalg import trace_distance
from multift.opstate import op_inner


def test_basis_probabilities_and_dephase(rng):
    basis = MeasurementBasis.random(3, rng)
    rho = random_density(3, rng)
    p = basis.probabilities(rho)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(p >= -1e-14)
    deph = basis.dephase(rho)
    # dephasing is idempotent and probability-preserving
    assert np.allclose(basis.dephase(deph), deph, atol=1e-13)
    assert np.allclose(basis.probabilities(deph), p, atol=1e-13)


def test_dephasing_map_matches_projector_sum(rng):
    basis = MeasurementBasis.random(2, rng)
    rho = random_density(2, rng)
    assert np.allclose(dephasing_map(basis).apply(rho), basis.dephase(rho), atol=1e-13)


def test_rescaling_map_and_z_factor(rng):
    gamma = regularize_state(random_density(2, rng))
    ref = ReferencePair.for_channel(random_channel(2, 2, 9), gamma)
    vals, basis = ref.in_eigvals, ref.in_basis
    # sandwiching with gamma^alpha scales Pi_ij by sqrt(g_i^2a g_j^2a)
    J = rescaling_map(ref.gamma, 0.5)
    for i in range(2):
        for j in range(2):
            unit = np.outer(basis[:, i], basis[:, j].conj())
            expect = z_factor(vals, 1.0, i, j) * unit
            assert np.allclose(J.apply(unit), expect, atol=1e-12)


def test_stinespring_channel_is_cptp(rng):
    U = haar_unitary(6, rng)
    env = random_density(3, rng)
    N = stinespring_channel(U, env)
    assert N.is_trace_preserving()
    assert N.is_completely_positive()


@pytest.mark.parametrize("d", [2, 3])
def test_petz_recovery_properties(d):
    # exact recovery of the reference state, CPTP, and the transpose relation
    for seed in range(25):
        rng = np.random.default_rng(seed)
        N = random_channel(d, d, seed)
        gamma = regularize_state(random_density(d, rng))
        ref = ReferencePair.for_channel(N, gamma)
        R = petz_recovery(N, ref.gamma)

        assert trace_distance(R.apply(ref.gamma_out), ref.gamma) <= 1e-11
        assert R.choi_min_eigenvalue() >= -1e-10
        assert R.is_trace_preserving(tol=1e-10)

        # (Pi_ij | R | Pi_kl) = Z_in(+1,ij)/Z_out(+1,kl) * conj (Pi_kl | N | Pi_ij)
        g, h = ref.in_basis, ref.out_basis
        for i in range(d):
            for j in range(d):
                u_in = np.outer(g[:, i], g[:, j].conj())
                for k in range(d):
                    for l in range(d):
                        u_out = np.outer(h[:, k], h[:, l].conj())
                        lhs = R.matrix_element(u_in, u_out)
                        rhs = (
                            ref.z_in(1.0, i, j)
                            / ref.z_out(1.0, k, l)
                            * np.conj(N.matrix_element(u_out, u_in))
                        )
                        assert abs(lhs - rhs) <= 1e-11


def test_petz_rejects_rank_deficient_output():
    N = random_channel(2, 2, 0)
    gamma = np.diag([1.0, 0.0])
    # a pure reference generically keeps N(gamma) full rank; build a genuinely
    # rank-deficient case with the identity channel instead
    from multift.opstate import Superoperator

    with pytest.raises(ValueError):
        petz_recovery(Superoperator.identity(2), gamma)


def test_regularize_state_full_rank():
    gamma = np.diag([1.0, 0.0])
    reg = regularize_state(gamma)
    assert np.trace(reg).real == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.eigvalsh(reg).min() > 0
