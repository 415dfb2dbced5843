import itertools

import numpy as np
import pytest

from multift import markov


@pytest.fixture(params=[0, 1, 2])
def proc(request):
    rng = np.random.default_rng(request.param)
    return markov.random_markov_process(2, 3, rng)


def test_quasi_normalization(proc):
    fwd = markov.enumerate_quasi(proc, "forward")
    bwd = markov.enumerate_quasi(proc, "backward")
    assert abs(sum(fwd.values()) - 1) <= 1e-12
    assert abs(sum(bwd.values()) - 1) <= 1e-12


def test_projective_marginalization(proc):
    # summing quasi weights over the link indices with projective (i=j, k=l)
    # support recovers the ordinary joint; full sums recover it exactly
    fwd = markov.enumerate_quasi(proc, "forward")
    marg = {}
    for (xs, links), w in fwd.items():
        marg[xs] = marg.get(xs, 0.0) + w
    for xs in itertools.product(range(2), repeat=3):
        p = markov.forward_joint_markov(proc, xs)
        assert abs(marg[xs] - p) <= 1e-13
        assert abs(marg[xs].imag) <= 1e-13


def test_pointwise_detailed_ft(proc):
    fwd = markov.enumerate_quasi(proc, "forward")
    bwd = markov.enumerate_quasi(proc, "backward")
    for q, w in fwd.items():
        if abs(w) <= 1e-13 and abs(bwd[q]) <= 1e-13:
            continue
        r = markov.ep_quasi_full(proc, q)
        assert abs(w - np.exp(r) * bwd[q]) <= 1e-11 * max(1.0, abs(w))


def test_chain_identities(proc):
    rep = markov.markov_ft_suite(proc)
    assert rep.chain_dev_r1p_r2 <= 1e-11
    assert rep.chain_dev_r1_r2p <= 1e-11


def test_integral_rate_ft_and_nonnegativity(proc):
    rep = markov.markov_ft_suite(proc)
    assert abs(rep.exp_avg_rate - 1) <= 1e-11
    assert rep.rate >= -1e-12


def test_marginal_fts_hold_for_divisible_dynamics(proc):
    rep = markov.markov_ft_suite(proc)
    assert rep.marginal_r1_ft_violation <= 1e-10
    assert rep.marginal_r2_ft_violation <= 1e-10


def test_backward_default_matches_forward_propagation():
    rng = np.random.default_rng(42)
    proc = markov.random_markov_process(2, 3, rng)
    rho = proc.rho0
    for N in proc.channels:
        rho = N.apply(rho)
    assert np.allclose(proc.backward_initial(), rho, atol=1e-13)
