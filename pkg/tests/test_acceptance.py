"""Acceptance suite: twelve numbered end-to-end checks, one per test.

Each test prints a single PASS/FAIL line so the run log doubles as a
checklist. Ensemble sizes and tolerances are fixed; instance seeds derive
from a fixed base so every run exercises the same instances.
"""

import itertools
import math
import time

import numpy as np
import pytest

from multift import closed, markov, nonmarkov
from multift.channels import (
    ReferencePair,
    petz_recovery,
    random_channel,
    random_density,
    regularize_state,
)
from multift.experiments import (
    ExperimentConfig,
    oracle_closed_prob,
    oracle_kraus_prob,
    run_experiment,
)
from multift.linalg import trace_distance


def _report(number: int, name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] criterion {number:2d}: {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"criterion {number} failed: {name} {detail}"


def _closed_ensemble(count=200, base_seed=1000):
    for idx in range(count):
        rng = np.random.default_rng(base_seed + idx)
        d = int(rng.choice([2, 3]))
        n = int(rng.choice([2, 3, 4]))
        yield closed.random_closed_process(d, n, rng)


_CLOSED = None


def closed_ensemble():
    global _CLOSED
    if _CLOSED is None:
        _CLOSED = list(_closed_ensemble())
    return _CLOSED


def test_criterion_01_closed_detailed_ft():
    t0 = time.time()
    worst = max(
        closed.detailed_ft_check(proc, "full").max_violation
        for proc in closed_ensemble()
    )
    elapsed = time.time() - t0
    ok = worst <= 1e-10 and elapsed <= 60.0
    _report(1, "closed detailed FT, 200 instances",
            ok, f"max violation {worst:.2e}, {elapsed:.1f}s")


def test_criterion_02_closed_marginal_fts():
    worst = max(
        closed.detailed_ft_check(proc, which).max_violation
        for proc in closed_ensemble()
        for which in ("R1", "R2")
    )
    _report(2, "closed marginal FTs R1 and R2", worst <= 1e-10,
            f"max violation {worst:.2e}")


def test_criterion_03_integral_identities():
    dev = 0.0
    for proc in closed_ensemble():
        res = closed.integral_ft_and_rate(proc)
        dev = max(dev, abs(res.exp_avg_full - 1), abs(res.exp_avg_rate - 1))
    _report(3, "integral FTs <e^-R> and <e^-(R-R1)>", dev <= 1e-10,
            f"max |<.> - 1| = {dev:.2e}")


def test_criterion_04_rate_nonnegativity():
    worst = min(
        closed.integral_ft_and_rate(proc).rate for proc in closed_ensemble()
    )
    for idx in range(100):
        rng = np.random.default_rng(3000 + idx)
        proc = markov.random_markov_process(2, 3, rng)
        worst = min(worst, markov.markov_ft_suite(proc).rate)
    _report(4, "rate <R> - <R1> nonnegative on closed and divisible instances",
            worst >= -1e-12, f"min rate {worst:.2e}")


def test_criterion_05_kolmogorov_construction():
    worst_k, worst_chain = 0.0, 0.0
    for idx in range(50):
        rng = np.random.default_rng(4000 + idx)
        proc = closed.permutation_process(2, 3, rng)
        worst_k = max(worst_k, closed.kolmogorov_check(proc))
        for path in proc.paths():
            try:
                r = closed.ep_full(proc, path)
                r1 = closed.ep_marginal_last(proc, path[:-1])
                r2 = closed.ep_marginal_first(proc, path[-2:])
            except ValueError:
                continue
            worst_chain = max(worst_chain, abs(r1 + r2 - r))
    ok = worst_k <= 1e-12 and worst_chain <= 1e-12
    _report(5, "basis-permuting construction satisfies the chain rule", ok,
            f"kolmogorov {worst_k:.2e}, R1+R2-R {worst_chain:.2e}")


def test_criterion_06_petz_recovery():
    worst_rec, worst_choi, worst_transpose = 0.0, 0.0, 0.0
    tp_ok = True
    for idx in range(100):
        rng = np.random.default_rng(5000 + idx)
        d = 2 if idx % 2 == 0 else 3
        N = random_channel(d, d, 5000 + idx)
        gamma = regularize_state(random_density(d, rng))
        ref = ReferencePair.for_channel(N, gamma)
        R = petz_recovery(N, ref.gamma)
        worst_rec = max(worst_rec, trace_distance(R.apply(ref.gamma_out), ref.gamma))
        worst_choi = max(worst_choi, -R.choi_min_eigenvalue())
        tp_ok = tp_ok and R.is_trace_preserving(tol=1e-10)
        g, h = ref.in_basis, ref.out_basis
        for i, j, k, l in itertools.product(range(d), repeat=4):
            u_in = np.outer(g[:, i], g[:, j].conj())
            u_out = np.outer(h[:, k], h[:, l].conj())
            lhs = R.matrix_element(u_in, u_out)
            rhs = (ref.z_in(1.0, i, j) / ref.z_out(1.0, k, l)
                   * np.conj(N.matrix_element(u_out, u_in)))
            worst_transpose = max(worst_transpose, abs(lhs - rhs))
    ok = (worst_rec <= 1e-11 and worst_choi <= 1e-10 and tp_ok
          and worst_transpose <= 1e-11)
    _report(6, "recovery-map criteria on 100 random (channel, reference) pairs",
            ok, f"recovery {worst_rec:.2e}, choi {worst_choi:.2e}, "
                f"transpose {worst_transpose:.2e}")


def test_criterion_07_markov_quasiprobability():
    worst = {"marg_f": 0.0, "marg_b": 0.0, "norm": 0.0, "pointwise": 0.0,
             "chain": 0.0}
    for idx in range(100):
        rng = np.random.default_rng(6000 + idx)
        proc = markov.random_markov_process(2, 3, rng)
        rep = markov.markov_ft_suite(proc)
        worst["marg_f"] = max(worst["marg_f"], rep.marginalization_dev_forward)
        worst["marg_b"] = max(worst["marg_b"], rep.marginalization_dev_backward)
        worst["norm"] = max(worst["norm"],
                            abs(rep.normalization_forward - 1),
                            abs(rep.normalization_backward - 1))
        worst["pointwise"] = max(worst["pointwise"], rep.pointwise_ft_violation)
        worst["chain"] = max(worst["chain"], rep.chain_dev_r1p_r2,
                             rep.chain_dev_r1_r2p)
    ok = (worst["marg_f"] <= 1e-12 and worst["marg_b"] <= 1e-12
          and worst["norm"] <= 1e-10 and worst["pointwise"] <= 1e-10
          and worst["chain"] <= 1e-11)
    _report(7, "divisible quasiprobability identities, 100 instances", ok,
            ", ".join(f"{k} {v:.2e}" for k, v in worst.items()))


def test_criterion_08_nonmarkov_normalization_and_avg_ep():
    worst_norm, worst_avg = 0.0, 0.0
    for idx in range(50):
        rng = np.random.default_rng(7000 + idx)
        proc = nonmarkov.random_dilated_process(2, 2, 3, rng)
        bwd = nonmarkov.enumerate_quasi_nonmarkov(proc, "backward")
        worst_norm = max(worst_norm, abs(sum(bwd.values()) - 1))
        worst_avg = max(
            worst_avg,
            abs(nonmarkov.avg_ep(proc) - nonmarkov.avg_ep_formula(proc)),
        )
    # control: starting in the reference state makes <R> vanish
    rng = np.random.default_rng(7999)
    base = nonmarkov.random_dilated_process(2, 2, 3, rng)
    bases = nonmarkov._aligned_bases(
        base.gamma0, base.rho_env, base.unitaries, base.bases[1:-1], base.gamma0
    )
    control = nonmarkov.DilatedProcess(
        rho0=base.gamma0, rho_env=base.rho_env, unitaries=base.unitaries,
        bases=bases, gamma0=base.gamma0,
    )
    control_avg = abs(nonmarkov.avg_ep(control))
    ok = worst_norm <= 1e-10 and worst_avg <= 1e-8 and control_avg <= 1e-10
    _report(8, "dilated backward normalization and <R> identity, 50 dilations",
            ok, f"norm {worst_norm:.2e}, avg-EP {worst_avg:.2e}, "
                f"control {control_avg:.2e}")


def test_criterion_09_markovian_reduction():
    worst = 0.0
    for idx in range(10):
        rng = np.random.default_rng(8000 + idx)
        proc, _ = nonmarkov.product_dilation(2, 2, 3, rng)
        mproc = nonmarkov.markovian_reduction(proc)
        for direction in ("forward", "backward"):
            qn = nonmarkov.enumerate_quasi_nonmarkov(proc, direction)
            qm = markov.enumerate_quasi(mproc, direction)
            worst = max(worst, max(abs(qn[q] - qm[q]) for q in qn))
        for q, w in nonmarkov.enumerate_quasi_nonmarkov(proc, "forward").items():
            if abs(w) <= 1e-12:
                continue
            worst = max(
                worst,
                abs(nonmarkov.ep_nonmarkov_full(proc, q)
                    - markov.ep_quasi_full(mproc, q)),
            )
    _report(9, "product-unitary dilations reproduce the divisible engine",
            worst <= 1e-10, f"max deviation {worst:.2e}")


def test_criterion_10_negative_rate_existence():
    t0 = time.time()
    hits = nonmarkov.negative_rate_search(1000, seed0=0)
    markov_min, closed_min = math.inf, math.inf
    for idx in range(50):
        rng = np.random.default_rng(9000 + idx)
        markov_min = min(
            markov_min,
            markov.markov_ft_suite(markov.random_markov_process(2, 3, rng)).rate,
        )
        closed_min = min(
            closed_min,
            closed.integral_ft_and_rate(
                closed.random_closed_process(2, 3, np.random.default_rng(9000 + idx))
            ).rate,
        )
    elapsed = time.time() - t0
    ok = (len(hits) >= 1 and markov_min >= -1e-12 and closed_min >= -1e-12
          and elapsed <= 600.0)
    _report(10, "negative rate exists with memory, never in the controls", ok,
            f"{len(hits)}/1000 negative, controls min {markov_min:.2e}/"
            f"{closed_min:.2e}, {elapsed:.0f}s")


def test_criterion_11_marginal_ft_failure_witness():
    witness = 0.0
    for idx in range(10):
        rng = np.random.default_rng(10_000 + idx)
        proc = nonmarkov.random_dilated_process(2, 2, 3, rng)
        witness = max(witness, nonmarkov.marginal_ft_failure_scan(proc))
    control = 0.0
    for idx in range(10):
        rng = np.random.default_rng(10_000 + idx)
        proc = nonmarkov.last_step_product_dilation(3, rng)
        control = max(control, nonmarkov.marginal_ft_failure_scan(proc))
    ok = witness > 1e-3 and control <= 1e-10
    _report(11, "last-step marginal FT fails with memory, holds without", ok,
            f"witness {witness:.2e}, control {control:.2e}")


def test_criterion_12_oracle_equivalence():
    worst_closed = 0.0
    for idx in range(100):
        rng = np.random.default_rng(11_000 + idx)
        d = int(rng.choice([2, 3]))
        n = int(rng.choice([2, 3, 4]))
        proc = closed.random_closed_process(d, n, rng)
        worst_closed = max(
            worst_closed,
            max(
                abs(closed.forward_joint(proc, path) - oracle_closed_prob(proc, path))
                for path in proc.paths()
            ),
        )
    from multift.channels import MeasurementBasis, random_kraus
    from multift.opstate import Superoperator

    worst_markov = 0.0
    for idx in range(50):
        rng = np.random.default_rng(12_000 + idx)
        rho0 = random_density(2, rng)
        kraus_chain = [random_kraus(2, 2, rng) for _ in range(2)]
        bases = [MeasurementBasis.random(2, rng) for _ in range(3)]
        channels = [Superoperator.from_kraus(ks) for ks in kraus_chain]
        refs = [
            ReferencePair.for_channel(N, regularize_state(random_density(2, rng)))
            for N in channels
        ]
        proc = markov.MarkovProcess(rho0=rho0, channels=channels, bases=bases,
                                    refs=refs)
        worst_markov = max(
            worst_markov,
            max(
                abs(markov.forward_joint_markov(proc, path)
                    - oracle_kraus_prob(rho0, kraus_chain, bases, path))
                for path in itertools.product(range(2), repeat=3)
            ),
        )
    ok = worst_closed <= 1e-10 and worst_markov <= 1e-11
    _report(12, "independent trajectory oracles agree with the engines", ok,
            f"closed {worst_closed:.2e}, divisible {worst_markov:.2e}")
