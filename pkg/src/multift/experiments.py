"""Experiment harness: configuration, oracles, and CSV reporting.

Each experiment enumerates seeded instances, asserts the relevant identities,
and emits one report row per asserted quantity. Rows carry an explicit
target and tolerance; inequality-style rows (rates, witness counts) use the
comparison recorded in the row's ``mode``.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import closed, markov, nonmarkov
from .channels import (
    MeasurementBasis,
    ReferencePair,
    random_density,
    random_kraus,
    regularize_state,
)
from .linalg import herm_eig
from .opstate import Superoperator

log = logging.getLogger("multift")

EXPERIMENTS = (
    "closed-ft",
    "markov-ft",
    "nonmarkov-ft",
    "ep-rate-scan",
    "memory-ablation",
    "kolmogorov",
    "oracle-check",
)

CSV_HEADER = ("experiment", "seed", "quantity", "value", "target", "tolerance", "pass")


@dataclass
class ExperimentConfig:
    experiment: str
    d: int = 2
    d_env: int = 2
    n: int = 3
    ensemble: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment: {self.experiment!r}")
        if self.d < 2 or self.d_env < 1 or self.n < 2 or self.ensemble < 1:
            raise ValueError("invalid dimensions, step count, or ensemble size")

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        known = {"experiment", "d", "d_env", "n", "ensemble", "seed"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "experiment" not in data:
            raise ValueError("config must name an experiment")
        kwargs = {"experiment": str(data["experiment"])}
        for key in known - {"experiment"}:
            if key in data:
                kwargs[key] = int(data[key])
        return cls(**kwargs)


def parse_config_file(path: str) -> dict:
    """Flat key = value format; blank lines and #-comments ignored."""
    data: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            data[key.strip()] = value.strip()
    return data


@dataclass
class ReportRow:
    experiment: str
    seed: int
    quantity: str
    value: float
    target: float
    tolerance: float
    mode: str = "abs"  # abs | ge | le

    @property
    def passed(self) -> bool:
        if not math.isfinite(self.value):
            return False
        if self.mode == "abs":
            return abs(self.value - self.target) <= self.tolerance
        if self.mode == "ge":
            return self.value >= self.target - self.tolerance
        if self.mode == "le":
            return self.value <= self.target + self.tolerance
        raise ValueError(f"unknown comparison mode: {self.mode}")

    def as_csv(self) -> tuple:
        return (
            self.experiment,
            self.seed,
            self.quantity,
            f"{self.value:.12e}",
            f"{self.target:.12e}",
            f"{self.tolerance:.1e}",
            str(self.passed),
        )


def rows_to_csv(rows: list[ReportRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row.as_csv())
    return buf.getvalue()


def _instance_seed(config: ExperimentConfig, index: int) -> int:
    return config.seed + index


# ----------------------------------------------------------------------------
# oracles
# ----------------------------------------------------------------------------

def oracle_closed_prob(proc: closed.ClosedProcess, path: tuple[int, ...]) -> float:
    """Born-rule trajectory probability, computed from pure-state amplitudes.

    Decomposes rho0 into its eigen-ensemble and chains single-step transition
    probabilities, with no superoperator machinery involved.
    """
    vals, vecs = herm_eig(proc.rho0)
    k1 = proc.bases[0].ket(path[0])
    p = sum(
        float(lam) * abs(np.vdot(k1, vecs[:, a])) ** 2
        for a, lam in enumerate(vals)
    )
    for t, U in enumerate(proc.unitaries):
        amp = np.vdot(proc.bases[t + 1].ket(path[t + 1]), U @ proc.bases[t].ket(path[t]))
        p *= abs(amp) ** 2
    return p


def oracle_kraus_prob(
    rho0: np.ndarray,
    kraus_chain: list[list[np.ndarray]],
    bases: list[MeasurementBasis],
    path: tuple[int, ...],
) -> float:
    """Trajectory probability from explicit Kraus branches.

    Projective measurements collapse the state at each time, so the joint
    probability factorizes into per-step branch sums of squared amplitudes.
    """
    p = float(bases[0].probabilities(rho0)[path[0]])
    for t, ks in enumerate(kraus_chain):
        src = bases[t].ket(path[t])
        dst = bases[t + 1].ket(path[t + 1])
        p *= sum(abs(np.vdot(dst, K @ src)) ** 2 for K in ks)
    return p


# ----------------------------------------------------------------------------
# experiments
# ----------------------------------------------------------------------------

def _run_closed_ft(config: ExperimentConfig) -> list[ReportRow]:
    rows = []
    for idx in range(config.ensemble):
        seed = _instance_seed(config, idx)
        rng = np.random.default_rng(seed)
        d = int(rng.choice([2, 3]))
        n = int(rng.choice([2, 3, 4]))
        proc = closed.random_closed_process(d, n, rng)
        for which in ("full", "R1", "R2"):
            res = closed.detailed_ft_check(proc, which)
            rows.append(
                ReportRow(config.experiment, seed, f"detailed_ft_{which}",
                          res.max_violation, 0.0, 1e-10)
            )
        integ = closed.integral_ft_and_rate(proc)
        rows.append(ReportRow(config.experiment, seed, "exp_avg_full",
                              integ.exp_avg_full, 1.0, 1e-10))
        rows.append(ReportRow(config.experiment, seed, "exp_avg_rate",
                              integ.exp_avg_rate, 1.0, 1e-10))
        rows.append(ReportRow(config.experiment, seed, "rate",
                              integ.rate, 0.0, 1e-12, mode="ge"))
    return rows


def _run_markov_ft(config: ExperimentConfig) -> list[ReportRow]:
    rows = []
    for idx in range(config.ensemble):
        seed = _instance_seed(config, idx)
        rng = np.random.default_rng(seed)
        proc = markov.random_markov_process(config.d, config.n, rng)
        rep = markov.markov_ft_suite(proc)
        r = lambda q, v, t, tol, m="abs": rows.append(
            ReportRow(config.experiment, seed, q, v, t, tol, mode=m)
        )
        r("norm_forward", abs(rep.normalization_forward - 1), 0.0, 1e-10)
        r("norm_backward", abs(rep.normalization_backward - 1), 0.0, 1e-10)
        r("quasi_marginalization_fwd", rep.marginalization_dev_forward, 0.0, 1e-12)
        r("quasi_marginalization_bwd", rep.marginalization_dev_backward, 0.0, 1e-12)
        r("pointwise_ft", rep.pointwise_ft_violation, 0.0, 1e-10)
        r("chain_r1p_r2", rep.chain_dev_r1p_r2, 0.0, 1e-11)
        r("chain_r1_r2p", rep.chain_dev_r1_r2p, 0.0, 1e-11)
        r("exp_avg_rate", abs(rep.exp_avg_rate - 1), 0.0, 1e-10)
        r("rate", rep.rate, 0.0, 1e-12, "ge")
    return rows


def _run_nonmarkov_ft(config: ExperimentConfig) -> list[ReportRow]:
    rows = []
    for idx in range(config.ensemble):
        seed = _instance_seed(config, idx)
        rng = np.random.default_rng(seed)
        proc = nonmarkov.random_dilated_process(config.d, config.d_env, config.n, rng)
        rep = nonmarkov.nonmarkov_ft_suite(proc)
        r = lambda q, v, t, tol, m="abs": rows.append(
            ReportRow(config.experiment, seed, q, v, t, tol, mode=m)
        )
        r("norm_forward", abs(rep.normalization_forward - 1), 0.0, 1e-10)
        r("norm_backward", abs(rep.normalization_backward - 1), 0.0, 1e-10)
        r("joint_marginalization", rep.joint_marginal_dev, 0.0, 1e-12)
        r("pointwise_ft", rep.pointwise_ft_violation, 0.0, 1e-9)
        r("avg_ep_identity", abs(rep.mean_R - rep.mean_R_formula), 0.0, 1e-8)
        r("marginal_r1_ft", rep.marginal_r1_ft_violation, 0.0, 1e-9)
        r("env_trace_condition", rep.tpc_dev, 0.0, 1e-11)
    return rows


def _run_ep_rate_scan(config: ExperimentConfig) -> list[ReportRow]:
    rows = []
    hits = nonmarkov.negative_rate_search(
        config.ensemble, seed0=config.seed, builder=nonmarkov.partial_swap_dilation,
        n=config.n,
    )
    rows.append(ReportRow(config.experiment, config.seed, "nonmarkov_negative_count",
                          float(len(hits)), 1.0, 0.0, mode="ge"))
    if hits:
        best = min(h[1] for h in hits)
        rows.append(ReportRow(config.experiment, config.seed, "most_negative_rate",
                              best, 0.0, math.inf, mode="le"))
    # controls: divisible and closed dynamics must never go negative
    markov_min = math.inf
    closed_min = math.inf
    control_size = max(1, config.ensemble // 10)
    for idx in range(control_size):
        rng = np.random.default_rng(config.seed + idx)
        mproc = markov.random_markov_process(config.d, config.n, rng)
        markov_min = min(markov_min, markov.markov_ft_suite(mproc).rate)
        cproc = closed.random_closed_process(config.d, config.n,
                                             np.random.default_rng(config.seed + idx))
        closed_min = min(closed_min, closed.integral_ft_and_rate(cproc).rate)
    rows.append(ReportRow(config.experiment, config.seed, "markov_control_min_rate",
                          markov_min, 0.0, 1e-12, mode="ge"))
    rows.append(ReportRow(config.experiment, config.seed, "closed_control_min_rate",
                          closed_min, 0.0, 1e-12, mode="ge"))
    # marginal-FT failure witness alongside its divisible control
    worst = 0.0
    for idx in range(control_size):
        rng = np.random.default_rng(config.seed + idx)
        proc = nonmarkov.random_dilated_process(config.d, config.d_env, config.n, rng)
        worst = max(worst, nonmarkov.marginal_ft_failure_scan(proc))
    rows.append(ReportRow(config.experiment, config.seed, "marginal_ft_witness",
                          worst, 1e-3, 0.0, mode="ge"))
    ctrl = 0.0
    for idx in range(control_size):
        rng = np.random.default_rng(config.seed + idx)
        proc = nonmarkov.last_step_product_dilation(config.n, rng,
                                                    d_s=config.d, d_e=config.d_env)
        ctrl = max(ctrl, nonmarkov.marginal_ft_failure_scan(proc))
    rows.append(ReportRow(config.experiment, config.seed, "marginal_ft_control",
                          ctrl, 0.0, 1e-10, mode="le"))
    return rows


def memory_ablation_values(
    proc: nonmarkov.DilatedProcess,
) -> tuple[float, float, float]:
    """<R> for the dephased process, its two-point variant, and an
    environment-refreshed divisible variant of the same dilation."""
    a = nonmarkov.avg_ep(proc)

    # (b) no intermediate measurements: compose the joint unitaries
    U_tot = proc.unitaries[0]
    for U in proc.unitaries[1:]:
        U_tot = U @ U_tot
    two_point = nonmarkov.DilatedProcess(
        rho0=proc.rho0,
        rho_env=proc.rho_env,
        unitaries=[U_tot],
        bases=[proc.bases[0], MeasurementBasis.computational(proc.dim)],
        gamma0=proc.gamma0,
    )
    two_point.bases = [
        proc.bases[0],
        MeasurementBasis.from_eigenbasis(two_point.rho_n()),
    ]
    two_point = nonmarkov.DilatedProcess(
        rho0=proc.rho0,
        rho_env=proc.rho_env,
        unitaries=[U_tot],
        bases=two_point.bases,
        gamma0=proc.gamma0,
    )
    b = nonmarkov.avg_ep(two_point)

    # (c) environment refreshed after every step: a divisible chain
    from .channels import dephasing_map, stinespring_channel

    channels, refs = [], []
    gamma = proc.gamma0
    for s in range(proc.n - 1):
        N = stinespring_channel(proc.unitaries[s], proc.rho_env)
        if s <= proc.n - 3:
            N = dephasing_map(proc.bases[s + 1]).compose(N)
        channels.append(N)
        refs.append(ReferencePair.for_channel(N, gamma))
        gamma = refs[-1].gamma_out
    mproc = markov.MarkovProcess(
        rho0=proc.rho0, channels=channels, bases=list(proc.bases), refs=refs
    )
    c = markov.markov_ft_suite(mproc).mean_R
    return a, b, c


def ablation_process(
    d_s: int, d_e: int, n: int, rng: np.random.Generator, product: bool = False
) -> nonmarkov.DilatedProcess:
    """Dilated template whose intermediate measurements are non-disturbing.

    Each intermediate basis is the eigenbasis of the propagated (dephased)
    system state, so measuring reveals nothing that is not already classical
    on the system; any remaining effect of the measurements is purely the
    destruction of system-environment coherence, i.e. memory.
    """
    from .channels import haar_unitary
    from .linalg import partial_trace

    rho0 = random_density(d_s, rng)
    rho_env = random_density(d_e, rng)
    if product:
        unitaries = [
            np.kron(haar_unitary(d_s, rng), haar_unitary(d_e, rng))
            for _ in range(n - 1)
        ]
    else:
        unitaries = [haar_unitary(d_s * d_e, rng) for _ in range(n - 1)]
    gamma0 = np.eye(d_s, dtype=complex) / d_s
    bases = [MeasurementBasis.from_eigenbasis(rho0)]
    W = np.kron(rho0, rho_env)
    for s, U in enumerate(unitaries):
        W = U @ W @ U.conj().T
        rho_sys = partial_trace(W, (d_s, d_e), keep=0)
        basis = MeasurementBasis.from_eigenbasis(rho_sys)
        bases.append(basis)
        if s <= n - 3:
            W = nonmarkov._dephase_se(W, basis.kets, d_e)
    return nonmarkov.DilatedProcess(
        rho0=rho0, rho_env=rho_env, unitaries=unitaries, bases=bases, gamma0=gamma0
    )


def _run_memory_ablation(config: ExperimentConfig) -> list[ReportRow]:
    rows = []
    for idx in range(config.ensemble):
        seed = _instance_seed(config, idx)
        rng = np.random.default_rng(seed)
        proc = ablation_process(config.d, config.d_env, config.n, rng)
        a, b, c = memory_ablation_values(proc)
        rows.append(ReportRow(config.experiment, seed, "avg_ep_dephased",
                              a, a, math.inf))
        rows.append(ReportRow(config.experiment, seed, "avg_ep_two_point",
                              b, b, math.inf))
        rows.append(ReportRow(config.experiment, seed, "avg_ep_env_refresh",
                              c, c, math.inf))
        if config.d_env == 1:
            spread = max(a, b, c) - min(a, b, c)
            rows.append(ReportRow(config.experiment, seed, "ablation_spread",
                                  spread, 0.0, 1e-10))
        else:
            # control: with product coupling the environment never correlates,
            # so refreshing it is a no-op and (a) must equal (c)
            prng = np.random.default_rng(seed)
            pproc = ablation_process(config.d, config.d_env, config.n, prng,
                                     product=True)
            pa, _, pc = memory_ablation_values(pproc)
            rows.append(ReportRow(config.experiment, seed, "product_refresh_gap",
                                  abs(pa - pc), 0.0, 1e-10))
    return rows


def _run_kolmogorov(config: ExperimentConfig) -> list[ReportRow]:
    rows = []
    n = max(config.n, 3)
    for idx in range(config.ensemble):
        seed = _instance_seed(config, idx)
        rng = np.random.default_rng(seed)
        proc = closed.permutation_process(config.d, n, rng)
        rows.append(ReportRow(config.experiment, seed, "kolmogorov_dev",
                              closed.kolmogorov_check(proc), 0.0, 1e-12))
        worst = 0.0
        for path in proc.paths():
            try:
                r = closed.ep_full(proc, path)
                r1 = closed.ep_marginal_last(proc, path[:-1])
                r2 = closed.ep_marginal_first(proc, path[-2:])
            except ValueError:
                continue
            worst = max(worst, abs(r1 + r2 - r))
        rows.append(ReportRow(config.experiment, seed, "chain_r1_plus_r2",
                              worst, 0.0, 1e-12))
        generic = closed.random_closed_process(config.d, n, rng)
        rows.append(ReportRow(config.experiment, seed, "generic_witness",
                              closed.kolmogorov_check(generic), 1e-3, 0.0, mode="ge"))
    return rows


def _run_oracle_check(config: ExperimentConfig) -> list[ReportRow]:
    rows = []
    for idx in range(config.ensemble):
        seed = _instance_seed(config, idx)
        rng = np.random.default_rng(seed)
        d = int(rng.choice([2, 3]))
        n = int(rng.choice([2, 3, 4]))
        proc = closed.random_closed_process(d, n, rng)
        dev = max(
            abs(closed.forward_joint(proc, path) - oracle_closed_prob(proc, path))
            for path in proc.paths()
        )
        rows.append(ReportRow(config.experiment, seed, "closed_oracle_dev",
                              dev, 0.0, 1e-10))

        # independent Kraus-trajectory route for a divisible chain
        rho0 = random_density(config.d, rng)
        kraus_chain = [
            random_kraus(config.d, config.d_env, rng) for _ in range(config.n - 1)
        ]
        bases = [MeasurementBasis.random(config.d, rng) for _ in range(config.n)]
        channels = [Superoperator.from_kraus(ks) for ks in kraus_chain]
        refs = [
            ReferencePair.for_channel(N, regularize_state(random_density(config.d, rng)))
            for N in channels
        ]
        mproc = markov.MarkovProcess(rho0=rho0, channels=channels, bases=bases, refs=refs)
        dev = max(
            abs(
                markov.forward_joint_markov(mproc, path)
                - oracle_kraus_prob(rho0, kraus_chain, bases, path)
            )
            for path in itertools.product(range(config.d), repeat=config.n)
        )
        rows.append(ReportRow(config.experiment, seed, "markov_oracle_dev",
                              dev, 0.0, 1e-11))
    return rows


_RUNNERS = {
    "closed-ft": _run_closed_ft,
    "markov-ft": _run_markov_ft,
    "nonmarkov-ft": _run_nonmarkov_ft,
    "ep-rate-scan": _run_ep_rate_scan,
    "memory-ablation": _run_memory_ablation,
    "kolmogorov": _run_kolmogorov,
    "oracle-check": _run_oracle_check,
}


def run_experiment(config: ExperimentConfig) -> list[ReportRow]:
    log.info("running %s: d=%d d_env=%d n=%d ensemble=%d seed=%d",
             config.experiment, config.d, config.d_env, config.n,
             config.ensemble, config.seed)
    rows = _RUNNERS[config.experiment](config)
    failed = [r for r in rows if not r.passed]
    log.info("%s: %d rows, %d failed", config.experiment, len(rows), len(failed))
    return rows
