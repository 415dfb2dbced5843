"""Channel constructors: rescaling maps, Petz recovery, dephasing, ensembles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import as_matrix, herm_eig, kron, mat_power, partial_trace
from .opstate import Superoperator, matrix_unit

EPS_REG = 1e-8
MIN_EIG_REG = 1e-10


class MeasurementBasis:
    """Orthonormal measurement basis; projectors Pi^x = |x><x|."""

    def __init__(self, kets: np.ndarray):
        kets = as_matrix(kets)  # columns are the basis kets
        d = kets.shape[0]
        if kets.shape != (d, d):
            raise ValueError("basis must be a square matrix of column kets")
        gram = kets.conj().T @ kets
        if np.linalg.norm(gram - np.eye(d)) > 1e-12 * d:
            raise ValueError("basis kets are not orthonormal")
        self.kets = kets
        self.dim = d

    @classmethod
    def computational(cls, d: int) -> "MeasurementBasis":
        return cls(np.eye(d, dtype=complex))

    @classmethod
    def from_eigenbasis(cls, state: np.ndarray) -> "MeasurementBasis":
        _, vecs = herm_eig(state)
        return cls(vecs)

    @classmethod
    def random(cls, d: int, rng: np.random.Generator) -> "MeasurementBasis":
        return cls(haar_unitary(d, rng))

    def ket(self, x: int) -> np.ndarray:
        return self.kets[:, x]

    def projector(self, x: int) -> np.ndarray:
        k = self.kets[:, x]
        return np.outer(k, k.conj())

    def probabilities(self, rho: np.ndarray) -> np.ndarray:
        return np.real(np.einsum("ix,ij,jx->x", self.kets.conj(), rho, self.kets))

    def dephase(self, rho: np.ndarray) -> np.ndarray:
        U = self.kets
        diag = np.diag(np.diag(U.conj().T @ rho @ U))
        return U @ diag @ U.conj().T


def dephasing_map(basis: MeasurementBasis) -> Superoperator:
    """Channel removing off-diagonal elements in the given basis."""
    kraus = [basis.projector(x) for x in range(basis.dim)]
    S = Superoperator.from_kraus(kraus)
    S._is_tp = True
    return S


def rescaling_map(O: np.ndarray, alpha: float) -> Superoperator:
    """J^alpha_O: X -> O^alpha X O^alpha, restricted to the support of O."""
    P = mat_power(O, alpha)
    return Superoperator(kron(P, P.conj()), P.shape[0], P.shape[0])


def z_factor(gamma_eigvals: np.ndarray, alpha: float, i: int, j: int) -> float:
    """sqrt(g_i^alpha * g_j^alpha) in the canonical eigenbasis ordering."""
    gi, gj = float(gamma_eigvals[i]), float(gamma_eigvals[j])
    if alpha < 0 and (gi <= 0 or gj <= 0):
        raise ValueError("zero eigenvalue with negative power: support violation")
    return float(np.sqrt(gi**alpha * gj**alpha))


def regularize_state(gamma: np.ndarray, eps: float = EPS_REG) -> np.ndarray:
    """Mix with the maximally mixed state when gamma is near rank-deficient."""
    gamma = as_matrix(gamma)
    vals, _ = herm_eig(gamma)
    if vals[0] < MIN_EIG_REG:
        d = gamma.shape[0]
        gamma = (1 - eps) * gamma + eps * np.eye(d) / d
    return gamma


def petz_recovery(N: Superoperator, gamma: np.ndarray) -> Superoperator:
    """Petz recovery map J^{1/2}_gamma o N^dag o J^{-1/2}_{N(gamma)}."""
    if not (N.is_trace_preserving() and N.is_completely_positive()):
        raise ValueError("Petz recovery requires a CPTP channel")
    gamma_out = N.apply(gamma)
    vals, _ = herm_eig(gamma_out)
    if vals[0] < MIN_EIG_REG:
        raise ValueError(
            "N(gamma) is rank-deficient; regularize gamma (regularize_state) first"
        )
    R = (
        rescaling_map(gamma, 0.5)
        .compose(N.adjoint())
        .compose(rescaling_map(gamma_out, -0.5))
    )
    return R


@dataclass
class ReferencePair:
    """Reference state of one step together with its image and eigendata."""

    gamma: np.ndarray
    gamma_out: np.ndarray
    in_eigvals: np.ndarray = field(init=False)
    in_basis: np.ndarray = field(init=False)
    out_eigvals: np.ndarray = field(init=False)
    out_basis: np.ndarray = field(init=False)

    def __post_init__(self):
        self.gamma = regularize_state(self.gamma)
        self.in_eigvals, self.in_basis = herm_eig(self.gamma)
        self.out_eigvals, self.out_basis = herm_eig(self.gamma_out)

    @classmethod
    def for_channel(cls, N: Superoperator, gamma: np.ndarray) -> "ReferencePair":
        gamma = regularize_state(gamma)
        return cls(gamma=gamma, gamma_out=N.apply(gamma))

    def z_in(self, alpha: float, i: int, j: int) -> float:
        return z_factor(self.in_eigvals, alpha, i, j)

    def z_out(self, alpha: float, k: int, l: int) -> float:
        return z_factor(self.out_eigvals, alpha, k, l)


# ----------------------------------------------------------------------------
# random ensembles (all RNG state explicit)
# ----------------------------------------------------------------------------


def haar_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR with R-diagonal phase correction."""
    G = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    Q, R = np.linalg.qr(G)
    phases = np.diag(R).copy()
    phases /= np.abs(phases)
    return Q * phases.conj()


def random_unitary(d: int, seed) -> np.ndarray:
    return haar_unitary(d, np.random.default_rng(seed))


def random_density(d: int, rng: np.random.Generator) -> np.ndarray:
    """Full-rank random mixed state from a Ginibre matrix."""
    G = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    rho = G @ G.conj().T
    return rho / np.trace(rho).real


def random_kraus(d: int, env_dim: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Kraus operators of a Stinespring channel with a fresh |0> environment."""
    U = haar_unitary(d * env_dim, rng)
    # K_e = (<e| (x) I) U (|0> (x) I); environment is the slow factor
    blocks = U.reshape(env_dim, d, env_dim, d)
    return [np.array(blocks[e, :, 0, :]) for e in range(env_dim)]


def random_channel(d: int, env_dim: int, seed) -> Superoperator:
    rng = np.random.default_rng(seed)
    S = Superoperator.from_kraus(random_kraus(d, env_dim, rng))
    return S


def stinespring_channel(U_se: np.ndarray, rho_env: np.ndarray) -> Superoperator:
    """Channel rho -> Tr_E[U (rho (x) rho_env) U^dag], system as slow factor."""
    U_se = as_matrix(U_se)
    rho_env = as_matrix(rho_env)
    d_e = rho_env.shape[0]
    d_s = U_se.shape[0] // d_e
    cols = []
    for i in range(d_s):
        for j in range(d_s):
            W = U_se @ kron(matrix_unit(d_s, i, j), rho_env) @ U_se.conj().T
            cols.append(partial_trace(W, (d_s, d_e), 0).reshape(-1))
    mat = np.array(cols).T
    S = Superoperator(mat, d_s, d_s)
    S._is_cp = True
    return S
