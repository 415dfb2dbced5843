"""Entropy production and fluctuation theorems for unitary multitime processes.

A process is n measurement times interleaved with n-1 unitary steps. Joint
probabilities are Born-rule chains over dephased trajectories; everything is
evaluated by exact enumeration over the d^n outcome paths.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .channels import MeasurementBasis, haar_unitary, random_density
from .linalg import as_matrix

ZERO_PROB = 1e-14


@dataclass
class ClosedProcess:
    rho0: np.ndarray
    unitaries: list[np.ndarray]  # U_1 .. U_{n-1}
    bases: list[MeasurementBasis]  # one per measurement time

    def __post_init__(self):
        self.rho0 = as_matrix(self.rho0)
        d = self.rho0.shape[0]
        if len(self.bases) != len(self.unitaries) + 1:
            raise ValueError("need one basis per time and one unitary per step")
        for U in self.unitaries:
            U = as_matrix(U)
            if np.linalg.norm(U @ U.conj().T - np.eye(d)) > 1e-11 * d:
                raise ValueError("step matrix is not unitary")
        if abs(np.trace(self.rho0) - 1) > 1e-10:
            raise ValueError("rho0 is not normalized")

    @property
    def n(self) -> int:
        return len(self.bases)

    @property
    def dim(self) -> int:
        return self.rho0.shape[0]

    def paths(self):
        return itertools.product(range(self.dim), repeat=self.n)

    def step_prob(self, t: int, x_from: int, x_to: int) -> float:
        """(Pi^{x_to} | U_t | Pi^{x_from}) = |<x_to| U_t |x_from>|^2."""
        amp = self.bases[t + 1].ket(x_to).conj() @ self.unitaries[t] @ self.bases[
            t
        ].ket(x_from)
        return float(abs(amp) ** 2)


def forward_joint(proc: ClosedProcess, path: tuple[int, ...]) -> float:
    p = float(np.real(proc.bases[0].probabilities(proc.rho0)[path[0]]))
    for t in range(proc.n - 1):
        p *= proc.step_prob(t, path[t], path[t + 1])
    return p


def backward_initial(proc: ClosedProcess) -> np.ndarray:
    rho = proc.rho0
    for U in proc.unitaries:
        rho = U @ rho @ U.conj().T
    return rho


def backward_joint(proc: ClosedProcess, path: tuple[int, ...]) -> float:
    """Backward chain consuming outcomes in order x_n -> x_1."""
    rho_b = backward_initial(proc)
    p = float(np.real(proc.bases[-1].probabilities(rho_b)[path[-1]]))
    for t in range(proc.n - 1):
        # (Pi^{x_t} | U_t^{-1} | Pi^{x_{t+1}}) with U^{-1} the inverse channel
        amp = proc.bases[t].ket(path[t]).conj() @ proc.unitaries[t].conj().T @ proc.bases[
            t + 1
        ].ket(path[t + 1])
        p *= float(abs(amp) ** 2)
    return p


def _rho_tilde_1(proc: ClosedProcess) -> np.ndarray:
    """U_{n-1}^{-1} M_n (rho_tilde_0) U_{n-1}: backward state one step in."""
    rho_b = proc.bases[-1].dephase(backward_initial(proc))
    U = proc.unitaries[-1]
    return U.conj().T @ rho_b @ U


def _rho_fwd_marginal(proc: ClosedProcess) -> np.ndarray:
    """rho_{n-1} from interleaved dephasings: U_{n-2} M_{n-2} ... U_1 M_1 rho0."""
    rho = proc.rho0
    for t in range(proc.n - 2):
        rho = proc.bases[t].dephase(rho)
        rho = proc.unitaries[t] @ rho @ proc.unitaries[t].conj().T
    return rho


def ep_full(proc: ClosedProcess, path: tuple[int, ...]) -> float:
    """R = ln[(Pi^{x_1}|rho0) / (Pi^{x_n}|rho_tilde_0)]."""
    p1 = float(proc.bases[0].probabilities(proc.rho0)[path[0]])
    pn = float(proc.bases[-1].probabilities(backward_initial(proc))[path[-1]])
    if p1 <= ZERO_PROB or pn <= ZERO_PROB:
        raise ValueError("undefined entropy production: zero boundary marginal")
    return math.log(p1) - math.log(pn)


def ep_marginal_last(proc: ClosedProcess, path_prefix: tuple[int, ...]) -> float:
    """R1 = ln[(Pi^{x_1}|rho0) / (Pi^{x_{n-1}}|rho_tilde_1)]."""
    p1 = float(proc.bases[0].probabilities(proc.rho0)[path_prefix[0]])
    pm = float(proc.bases[-2].probabilities(_rho_tilde_1(proc))[path_prefix[-1]])
    if p1 <= ZERO_PROB or pm <= ZERO_PROB:
        raise ValueError("undefined entropy production: zero boundary marginal")
    return math.log(p1) - math.log(pm)


def ep_marginal_first(proc: ClosedProcess, path_suffix: tuple[int, int]) -> float:
    """R2 = ln[(Pi^{x_{n-1}}|rho_{n-1}) / (Pi^{x_n}|rho_tilde_0)]."""
    x_m, x_n = path_suffix
    pm = float(proc.bases[-2].probabilities(_rho_fwd_marginal(proc))[x_m])
    pn = float(proc.bases[-1].probabilities(backward_initial(proc))[x_n])
    if pm <= ZERO_PROB or pn <= ZERO_PROB:
        raise ValueError("undefined entropy production: zero boundary marginal")
    return math.log(pm) - math.log(pn)


@dataclass
class EPDistribution:
    """Atoms of an entropy-production distribution (R value -> total weight)."""

    records: list[tuple[float, float]]
    direction: str = "forward"

    def atoms(self, tol: float = 1e-9) -> list[tuple[float, float]]:
        out: list[list[float]] = []
        for r, w in sorted(self.records):
            if out and abs(r - out[-1][0]) <= tol:
                out[-1][1] += w
            else:
                out.append([r, w])
        return [(r, w) for r, w in out]

    def total_weight(self) -> float:
        return sum(w for _, w in self.records)


def _ep_of_path(proc: ClosedProcess, which: str, path: tuple[int, ...]) -> float:
    if which == "full":
        return ep_full(proc, path)
    if which == "R1":
        return ep_marginal_last(proc, path[: proc.n - 1])
    if which == "R2":
        return ep_marginal_first(proc, (path[-2], path[-1]))
    raise ValueError(f"unknown EP variant {which!r}")


def ep_distribution(
    proc: ClosedProcess, which: str = "full", direction: str = "forward"
) -> EPDistribution:
    records = []
    for path in proc.paths():
        w = forward_joint(proc, path) if direction == "forward" else backward_joint(
            proc, path
        )
        if w <= ZERO_PROB:
            continue
        r = _ep_of_path(proc, which, path)
        records.append((r if direction == "forward" else -r, w))
    return EPDistribution(records=records, direction=direction)


@dataclass
class FTCheckResult:
    max_violation: float
    support_mismatches: list[tuple[int, ...]] = field(default_factory=list)


def _marginal_tables(proc: ClosedProcess, which: str):
    """Forward/backward weights grouped by the outcomes the EP depends on."""
    fwd: dict[tuple, float] = {}
    bwd: dict[tuple, float] = {}
    for path in proc.paths():
        if which == "full":
            key = path
        elif which == "R1":
            key = path[: proc.n - 1]
        else:
            key = (path[-2], path[-1])
        fwd[key] = fwd.get(key, 0.0) + forward_joint(proc, path)
        bwd[key] = bwd.get(key, 0.0) + backward_joint(proc, path)
    return fwd, bwd


def detailed_ft_check(proc: ClosedProcess, which: str = "full") -> FTCheckResult:
    """Pointwise P_f = e^R P_b over (marginal) outcomes with P_b > 0."""
    fwd, bwd = _marginal_tables(proc, which)
    worst = 0.0
    mismatches = []
    for key, pb in bwd.items():
        pf = fwd[key]
        if pb <= ZERO_PROB:
            if pf > ZERO_PROB:
                mismatches.append(key)
            continue
        if pf <= ZERO_PROB:
            mismatches.append(key)
            continue
        if which == "full":
            r = ep_full(proc, key)
        elif which == "R1":
            r = ep_marginal_last(proc, key)
        else:
            r = ep_marginal_first(proc, key)
        worst = max(worst, abs(pf - math.exp(r) * pb) / max(pf, pb))
    return FTCheckResult(max_violation=worst, support_mismatches=mismatches)


def kolmogorov_check(proc: ClosedProcess) -> float:
    """Max deviation between summed-out marginals and the derived processes."""
    if proc.n < 3:
        raise ValueError("Kolmogorov check needs at least 3 times")
    worst = 0.0
    for t in range(1, proc.n - 1):
        merged = ClosedProcess(
            rho0=proc.rho0,
            unitaries=(
                proc.unitaries[: t - 1]
                + [proc.unitaries[t] @ proc.unitaries[t - 1]]
                + proc.unitaries[t + 1 :]
            ),
            bases=proc.bases[:t] + proc.bases[t + 1 :],
        )
        marg: dict[tuple, float] = {}
        for path in proc.paths():
            key = path[:t] + path[t + 1 :]
            marg[key] = marg.get(key, 0.0) + forward_joint(proc, path)
        for path in merged.paths():
            dev = abs(marg.get(path, 0.0) - forward_joint(merged, path))
            worst = max(worst, dev)
    return worst


@dataclass
class IntegralFTResult:
    exp_avg_full: float  # <e^{-R}>
    exp_avg_rate: float  # <e^{-(R - R1)}>
    mean_R: float
    mean_R1: float
    mean_R2: float

    @property
    def rate(self) -> float:
        return self.mean_R - self.mean_R1


def integral_ft_and_rate(proc: ClosedProcess) -> IntegralFTResult:
    exp_full = exp_rate = mean_r = mean_r1 = mean_r2 = 0.0
    for path in proc.paths():
        w = forward_joint(proc, path)
        if w <= ZERO_PROB:
            continue
        r = ep_full(proc, path)
        r1 = ep_marginal_last(proc, path[: proc.n - 1])
        r2 = ep_marginal_first(proc, (path[-2], path[-1]))
        exp_full += w * math.exp(-r)
        exp_rate += w * math.exp(-(r - r1))
        mean_r += w * r
        mean_r1 += w * r1
        mean_r2 += w * r2
    return IntegralFTResult(exp_full, exp_rate, mean_r, mean_r1, mean_r2)


# ----------------------------------------------------------------------------
# process constructors used by the harness and tests
# ----------------------------------------------------------------------------


def random_closed_process(d: int, n: int, rng: np.random.Generator) -> ClosedProcess:
    return ClosedProcess(
        rho0=random_density(d, rng),
        unitaries=[haar_unitary(d, rng) for _ in range(n - 1)],
        bases=[MeasurementBasis.random(d, rng) for _ in range(n)],
    )


def permutation_process(d: int, n: int, rng: np.random.Generator) -> ClosedProcess:
    """Kolmogorov-consistent construction: phased permutation unitaries and a
    common computational basis at every time."""
    unitaries = []
    for _ in range(n - 1):
        perm = rng.permutation(d)
        phases = np.exp(2j * np.pi * rng.random(d))
        U = np.zeros((d, d), dtype=complex)
        U[perm, np.arange(d)] = phases
        unitaries.append(U)
    return ClosedProcess(
        rho0=random_density(d, rng),
        unitaries=unitaries,
        bases=[MeasurementBasis.computational(d) for _ in range(n)],
    )
