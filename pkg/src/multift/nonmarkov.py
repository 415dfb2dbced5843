"""Fluctuation theorems for processes with environmental memory.

The system couples to an explicit environment through a chain of joint
unitaries; intermediate dephasings are absorbed into the process so that
measuring or not measuring leaves the joint statistics unchanged. The
backward process is a single global recovery map built from a reference
trajectory gamma_0 -> gamma'_2 -> ... -> gamma'_n, not a composition of
per-step recoveries, which is where memory effects show up.

Index conventions: slot s = 0..n-2 covers the step from time s+1 to time
s+2. The input-side quasi pair (i_s, j_s) lives in the eigenbasis of the
trajectory state entering slot s (gamma_0 for s = 0, the previous slot's
dephased output otherwise); the output pair (k_s, l_s) lives in the
eigenbasis of the slot's dephased output. Joint operators use the system
index as the slow (leftmost) tensor factor.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .channels import MeasurementBasis, regularize_state, stinespring_channel
from .linalg import as_matrix, check_hermitian, herm_eig, mat_power, partial_trace, relative_entropy
from .opstate import Superoperator

UNITARY_TOL = 1e-11
RANK_TOL = 1e-12
ZERO_WEIGHT = 1e-14

LinkIndex = tuple[int, int, int, int]
QuasiOutcome = tuple[tuple[int, ...], tuple[LinkIndex, ...]]


def _kron_env(op_s: np.ndarray, d_e: int) -> np.ndarray:
    return np.kron(op_s, np.eye(d_e))


def _dephase_se(W: np.ndarray, kets: np.ndarray, d_e: int) -> np.ndarray:
    """Remove system coherences of a joint operator in the given basis."""
    out = np.zeros_like(W)
    for x in range(kets.shape[1]):
        k = kets[:, x]
        P = _kron_env(np.outer(k, k.conj()), d_e)
        out += P @ W @ P
    return out


def _extract(W: np.ndarray, kets: np.ndarray, a: int, b: int, d_e: int) -> np.ndarray:
    """Environment block <a| W |b> of a joint operator, system indices in kets."""
    d_s = kets.shape[0]
    W4 = W.reshape(d_s, d_e, d_s, d_e)
    return np.einsum("s,setf,t->ef", kets[:, a].conj(), W4, kets[:, b])


def _unit(kets: np.ndarray, a: int, b: int) -> np.ndarray:
    return np.outer(kets[:, a], kets[:, b].conj())


def _zlog(vals: np.ndarray, alpha: float, a: int, b: int) -> float:
    """ln sqrt(g_a^alpha g_b^alpha)."""
    return 0.5 * alpha * (math.log(vals[a]) + math.log(vals[b]))


def _zfac(vals: np.ndarray, alpha: float, a: int, b: int) -> float:
    return math.exp(_zlog(vals, alpha, a, b))


@dataclass
class GammaTrajectory:
    """Reference states per slot: gamma_in[s] enters slot s, gamma_out[s] leaves it."""

    gamma_in: list[np.ndarray]
    gamma_out: list[np.ndarray]
    in_vals: list[np.ndarray]
    in_bases: list[np.ndarray]
    out_vals: list[np.ndarray]
    out_bases: list[np.ndarray]


@dataclass
class ConditionalEnvState:
    """Environment operator conditioned on a quasi-measurement history."""

    history: tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]  # (i, j, k)
    sigma_raw: np.ndarray
    amplitude: complex  # trace of sigma_raw
    sigma: np.ndarray | None  # normalized state when the amplitude is usable


@dataclass
class DilatedProcess:
    rho0: np.ndarray
    rho_env: np.ndarray
    unitaries: list[np.ndarray]  # n-1 joint unitaries, system slow factor
    bases: list[MeasurementBasis]  # n system measurement bases
    gamma0: np.ndarray
    rho0_back: np.ndarray | None = None  # defaults to rho_n

    traj: GammaTrajectory = field(init=False, repr=False)
    _en: dict | None = field(default=None, init=False, repr=False)
    _er: dict | None = field(default=None, init=False, repr=False)
    _dists: dict = field(default_factory=dict, init=False, repr=False)
    _vin_t: list | None = field(default=None, init=False, repr=False)
    _vout_t: list | None = field(default=None, init=False, repr=False)
    _rho1_cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.rho0 = as_matrix(self.rho0)
        self.rho_env = as_matrix(self.rho_env)
        check_hermitian(self.rho0)
        check_hermitian(self.rho_env)
        d = self.rho0.shape[0]
        d_se = d * self.rho_env.shape[0]
        n = len(self.bases)
        if len(self.unitaries) != n - 1:
            raise ValueError("need n-1 joint unitaries for n times")
        for U in self.unitaries:
            U = as_matrix(U)
            if U.shape != (d_se, d_se):
                raise ValueError("joint unitary has wrong dimension")
            if np.linalg.norm(U.conj().T @ U - np.eye(d_se)) > UNITARY_TOL:
                raise ValueError("joint propagator is not unitary")
        for b in self.bases:
            if b.kets.shape[0] != d:
                raise ValueError("measurement basis dimension mismatch")
        self.gamma0 = regularize_state(self.gamma0)
        self.traj = self._build_trajectory()

    @property
    def n(self) -> int:
        return len(self.bases)

    @property
    def dim(self) -> int:
        return self.rho0.shape[0]

    @property
    def env_dim(self) -> int:
        return self.rho_env.shape[0]

    def _propagate(self, rho_s: np.ndarray, dephase_first: bool = False,
                   stop_slot: int | None = None) -> np.ndarray:
        """Joint state after the dephased dynamics started from rho_s x rho_env.

        Dephasings act at the intermediate times 2..n-1 only; ``dephase_first``
        additionally applies the time-1 measurement channel to the input.
        """
        if dephase_first:
            rho_s = self.bases[0].dephase(rho_s)
        W = np.kron(rho_s, self.rho_env)
        last = self.n - 2 if stop_slot is None else stop_slot
        for s in range(last + 1):
            U = self.unitaries[s]
            W = U @ W @ U.conj().T
            if s <= self.n - 3:
                W = _dephase_se(W, self.bases[s + 1].kets, self.env_dim)
        return W

    def _build_trajectory(self) -> GammaTrajectory:
        d_e = self.env_dim
        gamma_in, gamma_out = [self.gamma0], []
        W = np.kron(self.gamma0, self.rho_env)
        for s in range(self.n - 1):
            U = self.unitaries[s]
            W = U @ W @ U.conj().T
            if s <= self.n - 3:
                W = _dephase_se(W, self.bases[s + 1].kets, d_e)
            gamma_out.append(partial_trace(W, (self.dim, d_e), keep=0))
            if s < self.n - 2:
                gamma_in.append(gamma_out[-1])

        in_vals, in_bases, out_vals, out_bases = [], [], [], []
        for s in range(self.n - 1):
            if s == 0:
                vals, kets = herm_eig(gamma_in[0])
            else:
                kets = self.bases[s].kets
                vals = self._diag_vals(gamma_in[s], kets, f"gamma entering slot {s}")
            self._check_rank(vals, f"reference state entering slot {s}")
            in_vals.append(vals)
            in_bases.append(kets)
            if s <= self.n - 3:
                kets = self.bases[s + 1].kets
                vals = self._diag_vals(gamma_out[s], kets, f"gamma leaving slot {s}")
            else:
                vals, kets = herm_eig(gamma_out[s])
            self._check_rank(vals, f"reference state leaving slot {s}")
            out_vals.append(vals)
            out_bases.append(kets)
        return GammaTrajectory(gamma_in, gamma_out, in_vals, in_bases, out_vals, out_bases)

    @staticmethod
    def _diag_vals(state: np.ndarray, kets: np.ndarray, what: str) -> np.ndarray:
        M = kets.conj().T @ state @ kets
        off = M - np.diag(np.diag(M))
        if np.linalg.norm(off) > 1e-10:
            raise ValueError(f"{what} is not diagonal in its measurement basis")
        return np.real(np.diag(M))

    @staticmethod
    def _check_rank(vals: np.ndarray, what: str):
        if np.min(vals) < RANK_TOL:
            raise ValueError(
                f"{what} is rank-deficient; use a full-rank gamma0 "
                "(see regularize_state)"
            )

    def rho_n(self) -> np.ndarray:
        """Final system state of the dephased process (no boundary dephasings)."""
        W = self._propagate(self.rho0)
        return partial_trace(W, (self.dim, self.env_dim), keep=0)

    def backward_initial(self) -> np.ndarray:
        if self.rho0_back is not None:
            return self.rho0_back
        return self.rho_n()

    def link_outcomes(self):
        d2 = self.dim ** 2
        return itertools.product(
            itertools.product(range(d2), repeat=2), repeat=self.n - 1
        )

    def quasi_outcomes(self):
        d = self.dim
        for xs in itertools.product(range(d), repeat=self.n):
            for links in self.link_outcomes():
                yield (
                    xs,
                    tuple((a // d, a % d, b // d, b % d) for a, b in links),
                )


# ----------------------------------------------------------------------------
# projective joint probabilities
# ----------------------------------------------------------------------------

def forward_with_dephasing(proc: DilatedProcess, path: tuple[int, ...]) -> float:
    """n-point joint probability of the measurement-incorporated process.

    The intermediate dephasings are idempotent against the projections, so
    this must agree with the plain dilated dynamics; both are evaluated and
    compared as a sanity check.
    """
    if len(path) != proc.n:
        raise ValueError("path length must equal the number of times")
    d_e = proc.env_dim

    def run(with_dephasing: bool) -> float:
        P0 = proc.bases[0].projector(path[0])
        W = np.kron(P0 @ proc.rho0 @ P0, proc.rho_env)
        for s in range(proc.n - 1):
            U = proc.unitaries[s]
            W = U @ W @ U.conj().T
            if with_dephasing and s <= proc.n - 3:
                W = _dephase_se(W, proc.bases[s + 1].kets, d_e)
            P = _kron_env(proc.bases[s + 1].projector(path[s + 1]), d_e)
            W = P @ W @ P
        return float(np.real(np.trace(W)))

    p_deph = run(True)
    p_plain = run(False)
    if abs(p_deph - p_plain) > 1e-12:
        raise ValueError("dephased and plain joint probabilities disagree")
    return p_deph


# ----------------------------------------------------------------------------
# link tensors: quasi-measurement contractions of the process and its reverse
# ----------------------------------------------------------------------------

def forward_link_tensor(proc: DilatedProcess) -> dict:
    """Map link tuple -> contraction of the dephased dynamics with matrix units.

    Slot s is fed the unit Pi_{i_s j_s} (input eigenbasis), evolved jointly,
    dephased, and the output unit Pi_{k_s l_s} is read out while the
    environment block is carried into the next slot.
    """
    if proc._en is not None:
        return proc._en
    d, d_e = proc.dim, proc.env_dim
    out: dict = {}

    def recurse(s: int, W: np.ndarray, prefix: tuple):
        U = proc.unitaries[s]
        W = U @ W @ U.conj().T
        if s <= proc.n - 3:
            W = _dephase_se(W, proc.bases[s + 1].kets, d_e)
        kets_out = proc.traj.out_bases[s]
        for k in range(d):
            for l in range(d):
                sigma = _extract(W, kets_out, k, l, d_e)
                link_part = prefix + ((k, l),)
                if s == proc.n - 2:
                    out[link_part] = complex(np.trace(sigma))
                else:
                    kets_in = proc.traj.in_bases[s + 1]
                    for i in range(d):
                        for j in range(d):
                            recurse(
                                s + 1,
                                np.kron(_unit(kets_in, i, j), sigma),
                                link_part + ((i, j),),
                            )

    kets0 = proc.traj.in_bases[0]
    for i in range(d):
        for j in range(d):
            recurse(0, np.kron(_unit(kets0, i, j), proc.rho_env), ((i, j),))

    # re-key: flat tuple of (i, j, k, l) per slot
    proc._en = {
        tuple(
            (key[2 * s][0], key[2 * s][1], key[2 * s + 1][0], key[2 * s + 1][1])
            for s in range(proc.n - 1)
        ): v
        for key, v in out.items()
    }
    return proc._en


def backward_link_tensor(proc: DilatedProcess) -> dict:
    """Same contraction for the global recovery map, built by adjoint propagation.

    The recovery is J^{1/2} on every input side, the adjoint dynamics, and
    J^{-1/2} on every output side; the J maps act diagonally on the matrix
    units and contribute the reference eigenvalue factors directly.
    """
    if proc._er is not None:
        return proc._er
    d, d_e = proc.dim, proc.env_dim
    traj = proc.traj
    out: dict = {}

    def recurse(s: int, V: np.ndarray, suffix: tuple):
        if s <= proc.n - 3:
            V = _dephase_se(V, proc.bases[s + 1].kets, d_e)
        U = proc.unitaries[s]
        V = U.conj().T @ V @ U
        kets_in = traj.in_bases[s]
        for i in range(d):
            for j in range(d):
                sigma = _zfac(traj.in_vals[s], 1.0, i, j) * _extract(
                    V, kets_in, i, j, d_e
                )
                key_part = ((i, j),) + suffix
                if s == 0:
                    out[key_part] = complex(np.trace(proc.rho_env @ sigma))
                else:
                    kets_out = traj.out_bases[s - 1]
                    for k in range(d):
                        for l in range(d):
                            z = _zfac(traj.out_vals[s - 1], -1.0, k, l)
                            recurse(
                                s - 1,
                                np.kron(z * _unit(kets_out, k, l), sigma),
                                ((k, l),) + key_part,
                            )

    kets_last = traj.out_bases[proc.n - 2]
    for k in range(d):
        for l in range(d):
            z = _zfac(traj.out_vals[proc.n - 2], -1.0, k, l)
            recurse(
                proc.n - 2,
                np.kron(z * _unit(kets_last, k, l), np.eye(d_e)),
                ((k, l),),
            )

    proc._er = {
        tuple(
            (key[2 * s][0], key[2 * s][1], key[2 * s + 1][0], key[2 * s + 1][1])
            for s in range(proc.n - 1)
        ): v
        for key, v in out.items()
    }
    return proc._er


# ----------------------------------------------------------------------------
# quasiprobability weights
# ----------------------------------------------------------------------------

def _vin_table(proc: DilatedProcess, s: int) -> np.ndarray:
    """vin[i, j, x] = (Pi_ij | Pi^x) at time s+1, unit in the slot input basis."""
    if proc._vin_t is None:
        proc._vin_t = [None] * (proc.n - 1)
    if proc._vin_t[s] is None:
        g = proc.traj.in_bases[s]
        k = proc.bases[s].kets
        proc._vin_t[s] = np.einsum("ix,xj->ijx", g.conj().T @ k, k.conj().T @ g)
    return proc._vin_t[s]


def _vout_table(proc: DilatedProcess, s: int) -> np.ndarray:
    """vout[k, l, x] = (Pi^x | Pi_kl) at time s+2, unit in the slot output basis."""
    if proc._vout_t is None:
        proc._vout_t = [None] * (proc.n - 1)
    if proc._vout_t[s] is None:
        h = proc.traj.out_bases[s]
        kx = proc.bases[s + 1].kets
        proc._vout_t[s] = np.einsum("xk,lx->klx", kx.conj().T @ h, h.conj().T @ kx)
    return proc._vout_t[s]


def _overlap_chain(proc: DilatedProcess, q: QuasiOutcome) -> complex:
    xs, links = q
    w = _vin_table(proc, 0)[links[0][0], links[0][1], xs[0]]
    for s in range(proc.n - 2):
        w *= _vout_table(proc, s)[links[s][2], links[s][3], xs[s + 1]]
        w *= _vin_table(proc, s + 1)[links[s + 1][0], links[s + 1][1], xs[s + 1]]
    w *= _vout_table(proc, proc.n - 2)[links[-1][2], links[-1][3], xs[-1]]
    return complex(w)


def quasi_forward_nonmarkov(proc: DilatedProcess, q: QuasiOutcome) -> complex:
    xs, links = q
    p0 = complex(proc.bases[0].probabilities(proc.rho0)[xs[0]])
    return p0 * _overlap_chain(proc, q) * forward_link_tensor(proc)[links]


def quasi_backward_nonmarkov(proc: DilatedProcess, q: QuasiOutcome) -> complex:
    xs, links = q
    pn = complex(proc.bases[-1].probabilities(proc.backward_initial())[xs[-1]])
    inner = (
        pn
        * _overlap_chain(proc, q).conjugate()
        * backward_link_tensor(proc)[links]
    )
    return inner.conjugate()


def enumerate_quasi_nonmarkov(proc: DilatedProcess, direction: str = "forward"):
    if direction in proc._dists:
        return proc._dists[direction]
    link_tensor = (
        forward_link_tensor(proc)
        if direction == "forward"
        else backward_link_tensor(proc)
    )
    rho_edge = proc.rho0 if direction == "forward" else proc.backward_initial()
    basis_edge = proc.bases[0] if direction == "forward" else proc.bases[-1]
    probs = basis_edge.probabilities(rho_edge)
    dist = {}
    for q in proc.quasi_outcomes():
        xs, links = q
        edge = complex(probs[xs[0] if direction == "forward" else xs[-1]])
        chain = _overlap_chain(proc, q)
        if direction == "forward":
            dist[q] = edge * chain * link_tensor[links]
        else:
            dist[q] = (edge * chain.conjugate() * link_tensor[links]).conjugate()
    proc._dists[direction] = dist
    return dist


# ----------------------------------------------------------------------------
# entropy production
# ----------------------------------------------------------------------------

def _boundary_log(basis: MeasurementBasis, rho: np.ndarray, x: int) -> float:
    p = float(basis.probabilities(rho)[x])
    if p <= ZERO_WEIGHT:
        raise ValueError("undefined entropy production: zero boundary marginal")
    return math.log(p)


def ep_nonmarkov_full(proc: DilatedProcess, q: QuasiOutcome) -> float:
    xs, links = q
    r = _boundary_log(proc.bases[0], proc.rho0, xs[0])
    r -= _boundary_log(proc.bases[-1], proc.backward_initial(), xs[-1])
    for s, (i, j, k, l) in enumerate(links):
        r += _zlog(proc.traj.in_vals[s], -1.0, i, j)
        r += _zlog(proc.traj.out_vals[s], 1.0, k, l)
    return r


def avg_ep(proc: DilatedProcess) -> float:
    """<R> under the forward quasidistribution (real part; exact enumeration)."""
    total = 0.0
    for q, w in enumerate_quasi_nonmarkov(proc, "forward").items():
        if abs(w) <= ZERO_WEIGHT:
            continue
        total += (w * ep_nonmarkov_full(proc, q)).real
    return total


def avg_ep_formula(proc: DilatedProcess) -> float:
    """S(rho0||gamma0) - S(rho_n||gamma'_n): the closed form for <R>.

    Valid when rho0_back is the dephased-process output and the boundary
    bases diagonalize rho0 and rho_n respectively.
    """
    return relative_entropy(proc.rho0, proc.gamma0) - relative_entropy(
        proc.rho_n(), proc.traj.gamma_out[-1]
    )


# ----------------------------------------------------------------------------
# conditional environment states and the history-dependent marginal EP
# ----------------------------------------------------------------------------

def conditional_env_state(
    proc: DilatedProcess,
    history: tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]],
) -> ConditionalEnvState:
    """Environment operator after the first n-2 slots with quasi units inserted.

    ``history`` is (i_1..i_{n-2}, j_1..j_{n-2}, k_1..k_{n-2}) with the output
    reads taken diagonal (the dephasings kill off-diagonal output pairs).
    """
    i_h, j_h, k_h = history
    if proc.n < 3:
        raise ValueError("conditional environment states need at least three times")
    if not len(i_h) == len(j_h) == len(k_h) == proc.n - 2:
        raise ValueError("history must cover the first n-2 slots")
    d_e = proc.env_dim
    W = np.kron(_unit(proc.traj.in_bases[0], i_h[0], j_h[0]), proc.rho_env)
    for s in range(proc.n - 2):
        U = proc.unitaries[s]
        W = U @ W @ U.conj().T
        W = _dephase_se(W, proc.bases[s + 1].kets, d_e)
        sigma = _extract(W, proc.traj.out_bases[s], k_h[s], k_h[s], d_e)
        if s < proc.n - 3:
            W = np.kron(
                _unit(proc.traj.in_bases[s + 1], i_h[s + 1], j_h[s + 1]), sigma
            )
    amp = complex(np.trace(sigma))
    sigma_n = sigma / amp if abs(amp) > 1e-12 else None
    return ConditionalEnvState(history, sigma, amp, sigma_n)


def tpc_check(proc: DilatedProcess) -> float:
    """Trace condition: sum over output reads of Tr sigma^E = prod delta_{ij}."""
    d = proc.dim
    worst = 0.0
    m = proc.n - 2
    for i_h in itertools.product(range(d), repeat=m):
        for j_h in itertools.product(range(d), repeat=m):
            total = 0.0 + 0.0j
            for k_h in itertools.product(range(d), repeat=m):
                total += conditional_env_state(proc, (i_h, j_h, k_h)).amplitude
            target = 1.0 if i_h == j_h else 0.0
            worst = max(worst, abs(total - target))
    return worst


def rho_tilde_1_history(
    proc: DilatedProcess,
    history: tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]],
) -> np.ndarray:
    """History-dependent backward one-step marginal state "rho-tilde-1".

    ``history`` is (i_1..i_{n-2}, j_1..j_{n-2}, k_1..k_{n-2}); the result is
    Hermitian only for diagonal (i = j) histories.
    """
    if history in proc._rho1_cache:
        return proc._rho1_cache[history]
    if proc.n == 2:
        sigma = proc.rho_env
    else:
        cond = conditional_env_state(proc, history)
        if cond.sigma is None:
            raise ValueError("history has zero amplitude; marginal state undefined")
        sigma = cond.sigma
    N_last = stinespring_channel(proc.unitaries[-1], sigma)
    gamma_n = proc.traj.gamma_in[-1]
    gamma_np = proc.traj.gamma_out[-1]
    state = proc.bases[-1].dephase(proc.backward_initial())
    g_m = mat_power(gamma_np, -0.5)
    state = g_m @ state @ g_m
    state = N_last.adjoint().apply(state)
    g_p = mat_power(gamma_n, 0.5)
    result = g_p @ state @ g_p
    proc._rho1_cache[history] = result
    return result


def _history_of(links_prefix: tuple[LinkIndex, ...]):
    i_h = tuple(link[0] for link in links_prefix)
    j_h = tuple(link[1] for link in links_prefix)
    k_h = tuple(link[2] for link in links_prefix)
    l_h = tuple(link[3] for link in links_prefix)
    return i_h, j_h, k_h, l_h


def _r1_complex(
    proc: DilatedProcess,
    xs_prefix: tuple[int, ...],
    links_prefix: tuple[LinkIndex, ...],
) -> complex:
    """Principal-log marginal EP; real on diagonal histories.

    Off-diagonal histories carry conjugate-paired complex weights, so their
    contributions to averages are real in total.
    """
    if len(xs_prefix) != proc.n - 1 or len(links_prefix) != proc.n - 2:
        raise ValueError("prefix must cover the first n-1 times and n-2 slots")
    i_h, j_h, k_h, l_h = _history_of(links_prefix)
    if k_h != l_h:
        raise ValueError("off-diagonal output history has no marginal support")
    rho1 = rho_tilde_1_history(proc, (i_h, j_h, k_h))
    x = proc.bases[-2].kets[:, xs_prefix[-1]]
    amp = complex(np.vdot(x, rho1 @ x))
    if abs(amp) <= ZERO_WEIGHT:
        raise ValueError("undefined entropy production: zero boundary marginal")
    r = _boundary_log(proc.bases[0], proc.rho0, xs_prefix[0]) - np.log(amp)
    for s, (i, j, k, l) in enumerate(links_prefix):
        r += _zlog(proc.traj.in_vals[s], -1.0, i, j)
        r += _zlog(proc.traj.out_vals[s], 1.0, k, l)
    return complex(r)


def ep_marginal_history(
    proc: DilatedProcess,
    xs_prefix: tuple[int, ...],
    links_prefix: tuple[LinkIndex, ...],
) -> float:
    """R1: marginal EP over the last time, with history-dependent reference.

    Real-valued on diagonal (i = j) histories, where the backward reference
    state is Hermitian.
    """
    i_h, j_h, k_h, l_h = _history_of(links_prefix)
    if i_h != j_h or k_h != l_h:
        raise ValueError("real marginal EP defined on diagonal histories only")
    r = _r1_complex(proc, xs_prefix, links_prefix)
    if abs(r.imag) > 1e-9:
        raise ValueError("marginal EP is not real on this history")
    return float(r.real)


def avg_ep_marginal(proc: DilatedProcess) -> float:
    """<R1> under the forward quasidistribution."""
    marg: dict = {}
    for q, w in enumerate_quasi_nonmarkov(proc, "forward").items():
        xs, links = q
        key = (xs[:-1], links[:-1])
        marg[key] = marg.get(key, 0.0) + w
    total = 0.0
    for (xs_p, links_p), w in marg.items():
        if abs(w) <= 1e-13:
            continue
        total += (w * _r1_complex(proc, xs_p, links_p)).real
    return total


def ep_rate(proc: DilatedProcess) -> float:
    """<R> - <R1>: may be negative when the environment carries memory."""
    return avg_ep(proc) - avg_ep_marginal(proc)


def marginal_history_ft_check(proc: DilatedProcess) -> float:
    """Pointwise detailed FT for the history-dependent marginal R1.

    Checked in product form, P_f · (x|rho1)* / Z = P_b · (x_1|rho0), which on
    diagonal histories is P_f = e^{R1} P_b and stays meaningful on the
    complex-weighted off-diagonal histories.
    """
    fwd = enumerate_quasi_nonmarkov(proc, "forward")
    bwd = enumerate_quasi_nonmarkov(proc, "backward")
    marg_f: dict = {}
    marg_b: dict = {}
    for q, w in fwd.items():
        key = (q[0][:-1], q[1][:-1])
        marg_f[key] = marg_f.get(key, 0.0) + w
        marg_b[key] = marg_b.get(key, 0.0) + bwd[q]
    worst = 0.0
    for (xs_p, links_p), pf in marg_f.items():
        pb = marg_b[(xs_p, links_p)]
        scale = max(abs(pf), abs(pb))
        if scale <= 1e-13:
            continue
        i_h, j_h, k_h, l_h = _history_of(links_p)
        if k_h != l_h:
            worst = max(worst, scale)  # no support expected here at all
            continue
        rho1 = rho_tilde_1_history(proc, (i_h, j_h, k_h))
        x = proc.bases[-2].kets[:, xs_p[-1]]
        amp1 = complex(np.vdot(x, rho1 @ x))
        zz = 0.0
        for s, (i, j, k, l) in enumerate(links_p):
            zz += _zlog(proc.traj.in_vals[s], 1.0, i, j)
            zz += _zlog(proc.traj.out_vals[s], -1.0, k, l)
        p1 = math.exp(_boundary_log(proc.bases[0], proc.rho0, xs_p[0]))
        lhs = pf * amp1.conjugate() * math.exp(zz)
        rhs = pb * p1
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs)))
    return worst


# ----------------------------------------------------------------------------
# last-step marginal: where the detailed FT generically fails
# ----------------------------------------------------------------------------

def rho_forward_marginal(proc: DilatedProcess) -> np.ndarray:
    """State at time n-1 of the dephased process started from the dephased rho0."""
    W = proc._propagate(proc.rho0, dephase_first=True, stop_slot=proc.n - 3)
    return partial_trace(W, (proc.dim, proc.env_dim), keep=0)


def ep_marginal_last(proc: DilatedProcess, xs_pair, last_link: LinkIndex) -> float:
    """Candidate two-point EP for the last step (the Markovian closed form)."""
    x_m, x_n = xs_pair
    r = _boundary_log(proc.bases[-2], rho_forward_marginal(proc), x_m)
    r -= _boundary_log(proc.bases[-1], proc.backward_initial(), x_n)
    i, j, k, l = last_link
    r += _zlog(proc.traj.in_vals[-1], -1.0, i, j)
    r += _zlog(proc.traj.out_vals[-1], 1.0, k, l)
    return r


def marginal_ft_failure_scan(proc: DilatedProcess) -> float:
    """Max pointwise violation of the last-step marginal detailed FT.

    Near zero when the last step does not depend on earlier outcomes (the
    divisible case); generically of order one with memory.
    """
    if proc.n < 3:
        raise ValueError("last-step marginal needs at least three times")
    fwd = enumerate_quasi_nonmarkov(proc, "forward")
    bwd = enumerate_quasi_nonmarkov(proc, "backward")
    marg_f: dict = {}
    marg_b: dict = {}
    for q, w in fwd.items():
        xs, links = q
        key = ((xs[-2], xs[-1]), links[-1])
        marg_f[key] = marg_f.get(key, 0.0) + w
        marg_b[key] = marg_b.get(key, 0.0) + bwd[q]
    worst = 0.0
    for key, pf in marg_f.items():
        pb = marg_b[key]
        scale = max(abs(pf), abs(pb))
        if scale <= 1e-12:
            continue
        r2 = ep_marginal_last(proc, key[0], key[1])
        worst = max(worst, abs(pf - math.exp(r2) * pb) / scale)
    return worst


# ----------------------------------------------------------------------------
# suite
# ----------------------------------------------------------------------------

@dataclass
class NonMarkovFTReport:
    normalization_forward: complex
    normalization_backward: complex
    joint_marginal_dev: float
    pointwise_ft_violation: float
    mean_R: float
    mean_R_formula: float
    mean_R1: float
    marginal_r1_ft_violation: float
    tpc_dev: float

    @property
    def rate(self) -> float:
        return self.mean_R - self.mean_R1


def nonmarkov_ft_suite(proc: DilatedProcess) -> NonMarkovFTReport:
    fwd = enumerate_quasi_nonmarkov(proc, "forward")
    bwd = enumerate_quasi_nonmarkov(proc, "backward")
    norm_f = sum(fwd.values())
    norm_b = sum(bwd.values())

    proj: dict = {}
    pointwise = 0.0
    mean_r = 0.0
    for q, pf in fwd.items():
        xs, _ = q
        proj[xs] = proj.get(xs, 0.0) + pf
        pb = bwd[q]
        scale = max(abs(pf), abs(pb))
        if scale > ZERO_WEIGHT:
            r = ep_nonmarkov_full(proc, q)
            pointwise = max(pointwise, abs(pf - math.exp(r) * pb) / scale)
            mean_r += (pf * r).real
    joint_dev = max(
        abs(total - forward_with_dephasing(proc, xs)) for xs, total in proj.items()
    )
    return NonMarkovFTReport(
        normalization_forward=norm_f,
        normalization_backward=norm_b,
        joint_marginal_dev=joint_dev,
        pointwise_ft_violation=pointwise,
        mean_R=mean_r,
        mean_R_formula=avg_ep_formula(proc),
        mean_R1=avg_ep_marginal(proc),
        marginal_r1_ft_violation=marginal_history_ft_check(proc),
        tpc_dev=tpc_check(proc),
    )


# ----------------------------------------------------------------------------
# builders
# ----------------------------------------------------------------------------

def _aligned_bases(
    rho0: np.ndarray,
    rho_env: np.ndarray,
    unitaries: list[np.ndarray],
    inter_bases: list[MeasurementBasis],
    gamma0: np.ndarray,
) -> list[MeasurementBasis]:
    """Boundary bases diagonalizing rho0 and the final dephased-process state.

    This alignment makes the enumerated <R> match its relative-entropy form.
    """
    d = rho0.shape[0]
    first = MeasurementBasis.from_eigenbasis(rho0)
    probe = DilatedProcess(
        rho0=rho0,
        rho_env=rho_env,
        unitaries=unitaries,
        bases=[first] + inter_bases + [MeasurementBasis.computational(d)],
        gamma0=gamma0,
    )
    last = MeasurementBasis.from_eigenbasis(probe.rho_n())
    return [first] + inter_bases + [last]


def random_dilated_process(
    d_s: int,
    d_e: int,
    n: int,
    rng: np.random.Generator,
    gamma0: np.ndarray | None = None,
    align: bool = True,
) -> DilatedProcess:
    from .channels import haar_unitary, random_density

    rho0 = random_density(d_s, rng)
    rho_env = random_density(d_e, rng)
    unitaries = [haar_unitary(d_s * d_e, rng) for _ in range(n - 1)]
    inter = [MeasurementBasis.random(d_s, rng) for _ in range(n - 2)]
    if gamma0 is None:
        gamma0 = np.eye(d_s) / d_s
    if align:
        bases = _aligned_bases(rho0, rho_env, unitaries, inter, gamma0)
    else:
        bases = (
            [MeasurementBasis.random(d_s, rng)]
            + inter
            + [MeasurementBasis.random(d_s, rng)]
        )
    return DilatedProcess(
        rho0=rho0, rho_env=rho_env, unitaries=unitaries, bases=bases, gamma0=gamma0
    )


def swap_matrix(d: int) -> np.ndarray:
    S = np.zeros((d * d, d * d))
    for a in range(d):
        for b in range(d):
            S[a * d + b, b * d + a] = 1.0
    return S


def partial_swap_dilation(
    n: int,
    rng: np.random.Generator,
    theta: float | None = None,
    d: int = 2,
) -> DilatedProcess:
    """Qubit-qubit dilation dominated by exchange coupling.

    Each step is a partial SWAP composed with independent local unitaries;
    the exchanged excitations return to the system at later steps, which is
    the memory mechanism behind negative EP rates.
    """
    from .channels import haar_unitary, random_density

    S = swap_matrix(d)
    unitaries = []
    for _ in range(n - 1):
        th = theta if theta is not None else rng.uniform(0.2, 1.4)
        core = math.cos(th) * np.eye(d * d) + 1j * math.sin(th) * S
        local = np.kron(haar_unitary(d, rng), haar_unitary(d, rng))
        unitaries.append(core @ local)
    rho0 = random_density(d, rng)
    rho_env = random_density(d, rng)
    inter = [MeasurementBasis.random(d, rng) for _ in range(n - 2)]
    gamma0 = np.eye(d) / d
    bases = _aligned_bases(rho0, rho_env, unitaries, inter, gamma0)
    return DilatedProcess(
        rho0=rho0, rho_env=rho_env, unitaries=unitaries, bases=bases, gamma0=gamma0
    )


def product_dilation(
    d_s: int,
    d_e: int,
    n: int,
    rng: np.random.Generator,
    gamma0: np.ndarray | None = None,
) -> tuple[DilatedProcess, list[np.ndarray]]:
    """Dilation with factorized joint unitaries; returns the system factors."""
    from .channels import haar_unitary, random_density

    rho0 = random_density(d_s, rng)
    rho_env = random_density(d_e, rng)
    sys_factors = [haar_unitary(d_s, rng) for _ in range(n - 1)]
    unitaries = [
        np.kron(A, haar_unitary(d_e, rng)) for A in sys_factors
    ]
    inter = [MeasurementBasis.random(d_s, rng) for _ in range(n - 2)]
    if gamma0 is None:
        gamma0 = regularize_state(random_density(d_s, rng))
    bases = _aligned_bases(rho0, rho_env, unitaries, inter, gamma0)
    proc = DilatedProcess(
        rho0=rho0, rho_env=rho_env, unitaries=unitaries, bases=bases, gamma0=gamma0
    )
    return proc, sys_factors


def last_step_product_dilation(
    n: int, rng: np.random.Generator, d_s: int = 2, d_e: int = 2
) -> DilatedProcess:
    """Coupled early steps but a factorized final unitary.

    The last step then cannot depend on earlier outcomes through the
    environment, which restores the last-step marginal detailed FT.
    """
    from .channels import haar_unitary, random_density

    rho0 = random_density(d_s, rng)
    rho_env = random_density(d_e, rng)
    unitaries = [haar_unitary(d_s * d_e, rng) for _ in range(n - 2)]
    unitaries.append(np.kron(haar_unitary(d_s, rng), haar_unitary(d_e, rng)))
    inter = [MeasurementBasis.random(d_s, rng) for _ in range(n - 2)]
    gamma0 = np.eye(d_s) / d_s
    bases = _aligned_bases(rho0, rho_env, unitaries, inter, gamma0)
    return DilatedProcess(
        rho0=rho0, rho_env=rho_env, unitaries=unitaries, bases=bases, gamma0=gamma0
    )


def negative_rate_search(
    n_seeds: int,
    seed0: int = 0,
    builder=partial_swap_dilation,
    n: int = 3,
    threshold: float = -1e-6,
) -> list[tuple[int, float]]:
    """Seeds whose dilation has <R> - <R1> below the threshold."""
    hits = []
    for k in range(n_seeds):
        rng = np.random.default_rng(seed0 + k)
        proc = builder(n, rng)
        rate = ep_rate(proc)
        if rate < threshold:
            hits.append((seed0 + k, rate))
    return hits


def markovian_reduction(proc: DilatedProcess):
    """Step-divisible process with the same statistics, for divisible dilations.

    Builds per-step channels by feeding each slot the environment state fresh
    (exact when the joint unitaries factorize), absorbs the intermediate
    dephasings into the channels, and reuses the dilation's reference
    trajectory including its eigenbasis conventions so quasi outcomes are
    index-compatible.
    """
    from .channels import ReferencePair
    from .markov import MarkovProcess
    from .opstate import Superoperator as S_

    d = proc.dim
    channels = []
    refs = []
    for s in range(proc.n - 1):
        N = stinespring_channel(proc.unitaries[s], proc.rho_env)
        if s <= proc.n - 3:
            from .channels import dephasing_map

            N = dephasing_map(proc.bases[s + 1]).compose(N)
        channels.append(N)
        ref = ReferencePair(
            gamma=proc.traj.gamma_in[s], gamma_out=proc.traj.gamma_out[s]
        )
        ref.in_eigvals = proc.traj.in_vals[s]
        ref.in_basis = proc.traj.in_bases[s]
        ref.out_eigvals = proc.traj.out_vals[s]
        ref.out_basis = proc.traj.out_bases[s]
        refs.append(ref)
    return MarkovProcess(
        rho0=proc.rho0,
        channels=channels,
        bases=proc.bases,
        refs=refs,
        rho0_back=proc.backward_initial(),
    )
