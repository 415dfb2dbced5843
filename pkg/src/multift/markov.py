"""Quasiprobability fluctuation theorems for CPTP-step (Markovian) processes.

Each step m carries a reference pair (gamma_m, N_m(gamma_m)). Quasi-
measurements insert matrix units Pi_ij in the gamma_m eigenbasis on the input
side of step m and Pi_k'l' in the N_m(gamma_m) eigenbasis on the output side;
the resulting joint distribution over (x, i, j, k', l') is complex but
normalized, and its projective marginal is the ordinary joint probability.

Outcomes are indexed as q = (x_tuple, links) where links[m] = (i, j, k, l)
for step m (i, j input-side pair, k, l output-side pair).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .channels import (
    MeasurementBasis,
    ReferencePair,
    dephasing_map,
    petz_recovery,
)
from .linalg import as_matrix
from .opstate import Superoperator

ZERO_WEIGHT = 1e-14

QuasiOutcome = tuple[tuple[int, ...], tuple[tuple[int, int, int, int], ...]]


@dataclass
class MarkovProcess:
    rho0: np.ndarray
    channels: list[Superoperator]  # N_1 .. N_{n-1}
    bases: list[MeasurementBasis]
    refs: list[ReferencePair]  # one per step
    rho0_back: np.ndarray | None = None  # defaults to N_{n-1} o ... o N_1 (rho0)

    # contraction tables, built once
    _t: list[np.ndarray] = field(init=False, repr=False)
    _r: list[np.ndarray] = field(init=False, repr=False)
    _vin: list[np.ndarray] = field(init=False, repr=False)
    _vout: list[np.ndarray] = field(init=False, repr=False)
    _memo: dict = field(init=False, default_factory=dict, repr=False)

    def __post_init__(self):
        self.rho0 = as_matrix(self.rho0)
        n = len(self.bases)
        if len(self.channels) != n - 1 or len(self.refs) != n - 1:
            raise ValueError("need n-1 channels and reference pairs for n times")
        for m, (N, ref) in enumerate(zip(self.channels, self.refs)):
            if not N.is_trace_preserving():
                raise ValueError(f"channel {m} is not trace preserving")
            if not N.is_completely_positive():
                raise ValueError(f"channel {m} is not completely positive")
            if np.linalg.norm(N.apply(ref.gamma) - ref.gamma_out) > 1e-11:
                raise ValueError(f"reference pair {m} inconsistent with channel")
        self._build_tables()

    @property
    def n(self) -> int:
        return len(self.bases)

    @property
    def dim(self) -> int:
        return self.rho0.shape[0]

    def _build_tables(self):
        d = self.dim
        self._t, self._r, self._vin, self._vout = [], [], [], []
        for m, (N, ref) in enumerate(zip(self.channels, self.refs)):
            B_in = _unit_vectors(ref.in_basis)
            B_out = _unit_vectors(ref.out_basis)
            self._t.append(B_out.conj().T @ N.matrix @ B_in)
            R = petz_recovery(N, ref.gamma)
            self._r.append(B_in.conj().T @ R.matrix @ B_out)
            # vin[(i,j), x]: (Pi_ij | Pi^x) at time m in the gamma_m eigenbasis
            kets_x = self.bases[m].kets
            g = ref.in_basis
            self._vin.append(
                np.einsum("ax,xb->abx", g.conj().T @ kets_x, kets_x.conj().T @ g).reshape(
                    d * d, d
                )
            )
            # vout[(k,l), x]: (Pi^x | Pi_kl) at time m+1 in the out eigenbasis
            kets_y = self.bases[m + 1].kets
            h = ref.out_basis
            self._vout.append(
                np.einsum(
                    "xa,bx->abx", kets_y.conj().T @ h, h.conj().T @ kets_y
                ).reshape(d * d, d)
            )

    def backward_initial(self) -> np.ndarray:
        if self.rho0_back is not None:
            return self.rho0_back
        if "rho_back" not in self._memo:
            rho = self.rho0
            for N in self.channels:
                rho = N.apply(rho)
            self._memo["rho_back"] = rho
        return self._memo["rho_back"]

    def link_outcomes(self):
        d2 = self.dim * self.dim
        per_link = itertools.product(range(d2), repeat=2)
        return itertools.product(
            [(a, b) for a, b in per_link], repeat=self.n - 1
        )

    def quasi_outcomes(self):
        d = self.dim
        for xs in itertools.product(range(d), repeat=self.n):
            for links in self.link_outcomes():
                yield (
                    xs,
                    tuple(
                        (a // d, a % d, b // d, b % d) for a, b in links
                    ),
                )


def _unit_vectors(basis: np.ndarray) -> np.ndarray:
    """Columns vec(|b_i><b_j|) for every ordered pair, row-major over (i, j)."""
    d = basis.shape[0]
    cols = [
        np.outer(basis[:, i], basis[:, j].conj()).reshape(-1)
        for i in range(d)
        for j in range(d)
    ]
    return np.array(cols).T


def _flat(d: int, i: int, j: int) -> int:
    return i * d + j


def forward_joint_markov(proc: MarkovProcess, path: tuple[int, ...]) -> float:
    p = complex(proc.bases[0].probabilities(proc.rho0)[path[0]])
    for m, N in enumerate(proc.channels):
        proj_in = proc.bases[m].projector(path[m])
        proj_out = proc.bases[m + 1].projector(path[m + 1])
        p *= N.matrix_element(proj_out, proj_in)
    if abs(p.imag) > 1e-10:
        raise ValueError("projective joint acquired an imaginary part")
    return float(p.real)


def quasi_forward(proc: MarkovProcess, q: QuasiOutcome) -> complex:
    xs, links = q
    d = proc.dim
    w = complex(proc.bases[0].probabilities(proc.rho0)[xs[0]])
    w *= proc._vin[0][_flat(d, links[0][0], links[0][1]), xs[0]]
    for m, (i, j, k, l) in enumerate(links):
        w *= proc._t[m][_flat(d, k, l), _flat(d, i, j)]
        if m < proc.n - 2:
            ip, jp, _, _ = links[m + 1]
            w *= proc._vout[m][_flat(d, k, l), xs[m + 1]]
            w *= proc._vin[m + 1][_flat(d, ip, jp), xs[m + 1]]
    w *= proc._vout[-1][_flat(d, links[-1][2], links[-1][3]), xs[-1]]
    return w


def quasi_backward(proc: MarkovProcess, q: QuasiOutcome) -> complex:
    """Backward quasiprobability (conjugated contraction, Petz steps)."""
    xs, links = q
    d = proc.dim
    rho_b = proc.backward_initial()
    b = complex(proc.bases[-1].probabilities(rho_b)[xs[-1]])
    b *= proc._vout[-1][_flat(d, links[-1][2], links[-1][3]), xs[-1]].conj()
    for m in range(proc.n - 2, -1, -1):
        i, j, k, l = links[m]
        b *= proc._r[m][_flat(d, i, j), _flat(d, k, l)]
        if m > 0:
            _, _, kp, lp = links[m - 1]
            b *= proc._vout[m - 1][_flat(d, kp, lp), xs[m]].conj()
            b *= proc._vin[m][_flat(d, i, j), xs[m]].conj()
    b *= proc._vin[0][_flat(d, links[0][0], links[0][1]), xs[0]].conj()
    return b.conjugate()


def _z_log(proc: MarkovProcess, m: int, link: tuple[int, int, int, int]) -> float:
    """ln(Z^{gamma_m^-1}_{ij} Z^{N_m(gamma_m)}_{k'l'}) for one step."""
    i, j, k, l = link
    return math.log(proc.refs[m].z_in(-1.0, i, j)) + math.log(
        proc.refs[m].z_out(1.0, k, l)
    )


def _boundary_log(proc: MarkovProcess, basis: MeasurementBasis, rho, x) -> float:
    p = float(basis.probabilities(rho)[x])
    if p <= ZERO_WEIGHT:
        raise ValueError("undefined entropy production: zero boundary marginal")
    return math.log(p)


def ep_quasi_full(proc: MarkovProcess, q: QuasiOutcome) -> float:
    """Closed-form R: boundary term plus per-step Z-factor terms."""
    xs, links = q
    r = _boundary_log(proc, proc.bases[0], proc.rho0, xs[0])
    r -= _boundary_log(proc, proc.bases[-1], proc.backward_initial(), xs[-1])
    for m, link in enumerate(links):
        r += _z_log(proc, m, link)
    return r


def rho_tilde_1(proc: MarkovProcess) -> np.ndarray:
    """R_{n-1} o M_n (rho_tilde_0)."""
    if "rho_tilde_1" not in proc._memo:
        ref = proc.refs[-1]
        R = petz_recovery(proc.channels[-1], ref.gamma)
        proc._memo["rho_tilde_1"] = R.apply(
            proc.bases[-1].dephase(proc.backward_initial())
        )
    return proc._memo["rho_tilde_1"]


def rho_fwd_marginal(proc: MarkovProcess) -> np.ndarray:
    """rho_{n-1} = N_{n-2} o M_{n-2} o ... o N_1 o M_1 (rho0)."""
    if "rho_fwd_marginal" not in proc._memo:
        rho = proc.rho0
        for m in range(proc.n - 2):
            rho = proc.channels[m].apply(proc.bases[m].dephase(rho))
        proc._memo["rho_fwd_marginal"] = rho
    return proc._memo["rho_fwd_marginal"]


def ep_quasi_r1(proc: MarkovProcess, xs, links) -> float:
    """R1: marginal over the last time and last-step quasi indices."""
    r = _boundary_log(proc, proc.bases[0], proc.rho0, xs[0])
    r -= _boundary_log(proc, proc.bases[-2], rho_tilde_1(proc), xs[-2])
    for m in range(proc.n - 2):
        r += _z_log(proc, m, links[m])
    return r


def ep_quasi_r2(proc: MarkovProcess, xs_last_two, last_link) -> float:
    """R2: marginal over everything before time n-1."""
    x_m, x_n = xs_last_two
    r = _boundary_log(proc, proc.bases[-2], rho_fwd_marginal(proc), x_m)
    r -= _boundary_log(proc, proc.bases[-1], proc.backward_initial(), x_n)
    return r + _z_log(proc, proc.n - 2, last_link)


def ep_quasi_r1_prime(proc: MarkovProcess, xs, links) -> float:
    """R'1: same forward marginal as R1, backward started from rho_{n-1}."""
    r = _boundary_log(proc, proc.bases[0], proc.rho0, xs[0])
    r -= _boundary_log(proc, proc.bases[-2], rho_fwd_marginal(proc), xs[-2])
    for m in range(proc.n - 2):
        r += _z_log(proc, m, links[m])
    return r


def ep_quasi_r2_prime(proc: MarkovProcess, xs_last_two, last_link) -> float:
    """R'2: last step with forward process restarted from rho_tilde_1."""
    x_m, x_n = xs_last_two
    r = _boundary_log(proc, proc.bases[-2], rho_tilde_1(proc), x_m)
    r -= _boundary_log(proc, proc.bases[-1], proc.backward_initial(), x_n)
    return r + _z_log(proc, proc.n - 2, last_link)


def enumerate_quasi(proc: MarkovProcess, direction: str = "forward"):
    fn = quasi_forward if direction == "forward" else quasi_backward
    return {q: fn(proc, q) for q in proc.quasi_outcomes()}


@dataclass
class MarkovFTReport:
    normalization_forward: complex
    normalization_backward: complex
    marginalization_dev_forward: float
    marginalization_dev_backward: float
    pointwise_ft_violation: float
    chain_dev_r1p_r2: float
    chain_dev_r1_r2p: float
    exp_avg_rate: complex  # <e^{-(R-R1)}>
    mean_R: float
    mean_R1: float
    mean_R2_prime: float
    marginal_r1_ft_violation: float
    marginal_r2_ft_violation: float

    @property
    def rate(self) -> float:
        return self.mean_R - self.mean_R1

    @property
    def rate_vs_r2prime_gap(self) -> float:
        return abs(self.rate - self.mean_R2_prime)


def random_markov_process(
    d: int, n: int, rng: np.random.Generator, env_dim: int | None = None
) -> MarkovProcess:
    """Random CPTP chain with full-rank references and random bases."""
    from .channels import (
        random_channel,
        random_density,
        regularize_state,
    )

    if env_dim is None:
        env_dim = d
    rho0 = random_density(d, rng)
    channels, refs, bases = [], [], [MeasurementBasis.random(d, rng)]
    for _ in range(n - 1):
        N = random_channel(d, env_dim, rng.integers(1 << 30))
        gamma = regularize_state(random_density(d, rng))
        channels.append(N)
        refs.append(ReferencePair.for_channel(N, gamma))
        bases.append(MeasurementBasis.random(d, rng))
    return MarkovProcess(rho0=rho0, channels=channels, bases=bases, refs=refs)


def _marginalization_dev(proc: MarkovProcess, dist, direction: str) -> float:
    """Max |sum over quasi indices - projective joint| across all paths."""
    proj: dict[tuple, complex] = {}
    for (xs, _), w in dist.items():
        proj[xs] = proj.get(xs, 0.0) + w
    worst = 0.0
    for xs, total in proj.items():
        if direction == "forward":
            target = forward_joint_markov(proc, xs)
        else:
            target = projective_backward_joint(proc, xs)
        worst = max(worst, abs(total - target))
    return worst


def projective_backward_joint(proc: MarkovProcess, path: tuple[int, ...]) -> float:
    """Backward joint from the Petz-step process state and projective ops."""
    rho_b = proc.backward_initial()
    p = complex(proc.bases[-1].probabilities(rho_b)[path[-1]])
    for m in range(proc.n - 2, -1, -1):
        R = petz_recovery(proc.channels[m], proc.refs[m].gamma)
        proj_in = proc.bases[m + 1].projector(path[m + 1])
        proj_out = proc.bases[m].projector(path[m])
        p *= R.matrix_element(proj_out, proj_in)
    if abs(p.imag) > 1e-10:
        raise ValueError("projective backward joint acquired an imaginary part")
    return float(p.real)


def markov_ft_suite(proc: MarkovProcess) -> MarkovFTReport:
    fwd = enumerate_quasi(proc, "forward")
    bwd = enumerate_quasi(proc, "backward")

    norm_f = sum(fwd.values())
    norm_b = sum(bwd.values())
    marg_f = _marginalization_dev(proc, fwd, "forward")
    marg_b = _marginalization_dev(proc, bwd, "backward")

    pointwise = 0.0
    exp_rate = 0.0 + 0.0j
    mean_r = mean_r1 = 0.0
    chain1 = chain2 = 0.0
    # marginal distributions for the R1 / R2 detailed FTs
    marg1_f: dict[tuple, complex] = {}
    marg1_b: dict[tuple, complex] = {}
    marg2_f: dict[tuple, complex] = {}
    marg2_b: dict[tuple, complex] = {}
    for q, pf in fwd.items():
        xs, links = q
        pb = bwd[q]
        r = ep_quasi_full(proc, q)
        r1 = ep_quasi_r1(proc, xs, links)
        r2 = ep_quasi_r2(proc, (xs[-2], xs[-1]), links[-1])
        r1p = ep_quasi_r1_prime(proc, xs, links)
        r2p = ep_quasi_r2_prime(proc, (xs[-2], xs[-1]), links[-1])
        chain1 = max(chain1, abs(r1p + r2 - r))
        chain2 = max(chain2, abs(r1 + r2p - r))
        if abs(pb) > ZERO_WEIGHT or abs(pf) > ZERO_WEIGHT:
            pointwise = max(
                pointwise,
                abs(pf - math.exp(r) * pb) / max(abs(pf), abs(pb)),
            )
        exp_rate += pf * math.exp(-(r - r1))
        mean_r += (pf * r).real
        mean_r1 += (pf * r1).real
        key1 = (xs[:-1], links[:-1])
        marg1_f[key1] = marg1_f.get(key1, 0.0) + pf
        marg1_b[key1] = marg1_b.get(key1, 0.0) + pb
        key2 = ((xs[-2], xs[-1]), links[-1])
        marg2_f[key2] = marg2_f.get(key2, 0.0) + pf
        marg2_b[key2] = marg2_b.get(key2, 0.0) + pb

    viol1 = 0.0
    for key, pf in marg1_f.items():
        pb = marg1_b[key]
        if max(abs(pf), abs(pb)) <= ZERO_WEIGHT:
            continue
        r1 = ep_quasi_r1(proc, key[0] + (0,), key[1] + ((0, 0, 0, 0),))
        viol1 = max(viol1, abs(pf - math.exp(r1) * pb) / max(abs(pf), abs(pb)))
    viol2 = 0.0
    for key, pf in marg2_f.items():
        pb = marg2_b[key]
        if max(abs(pf), abs(pb)) <= ZERO_WEIGHT:
            continue
        r2 = ep_quasi_r2(proc, key[0], key[1])
        viol2 = max(viol2, abs(pf - math.exp(r2) * pb) / max(abs(pf), abs(pb)))

    # <R'2> under the last-step forward process restarted from rho_tilde_1
    two_point = MarkovProcess(
        rho0=rho_tilde_1(proc),
        channels=[proc.channels[-1]],
        bases=[proc.bases[-2], proc.bases[-1]],
        refs=[proc.refs[-1]],
        rho0_back=proc.backward_initial(),
    )
    mean_r2p = 0.0
    for q2, w2 in enumerate_quasi(two_point, "forward").items():
        xs2, links2 = q2
        mean_r2p += (w2 * ep_quasi_r2_prime(proc, xs2, links2[-1])).real

    return MarkovFTReport(
        normalization_forward=norm_f,
        normalization_backward=norm_b,
        marginalization_dev_forward=marg_f,
        marginalization_dev_backward=marg_b,
        pointwise_ft_violation=pointwise,
        chain_dev_r1p_r2=chain1,
        chain_dev_r1_r2p=chain2,
        exp_avg_rate=exp_rate,
        mean_R=mean_r,
        mean_R1=mean_r1,
        mean_R2_prime=mean_r2p,
        marginal_r1_ft_violation=viol1,
        marginal_r2_ft_violation=viol2,
    )
