"""Operator-state formalism: vectorization, superoperators and Choi matrices.

Operators are treated as vectors with inner product (O1|O2) = Tr(O1^dag O2).
The matrix-unit basis Pi_ij = |i><j| is indexed row-major: component (i, j)
of an operator sits at flat index i*d + j, so vectorize is a plain reshape.
This index convention (row index slow) is fixed globally.
"""

from __future__ import annotations

import numpy as np

from .linalg import as_matrix, herm_eig, kron

CP_TOL = 1e-10
TP_TOL = 1e-10


def vectorize(O: np.ndarray) -> np.ndarray:
    O = as_matrix(O)
    if O.shape[0] != O.shape[1]:
        raise ValueError("only square operators are vectorized")
    return O.reshape(-1)


def devectorize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=complex).reshape(-1)
    d = int(round(np.sqrt(v.size)))
    if d * d != v.size:
        raise ValueError(f"vector of length {v.size} is not a square operator")
    return v.reshape(d, d)


def op_inner(A: np.ndarray, B: np.ndarray) -> complex:
    """(A|B) = Tr(A^dag B)."""
    return complex(np.vdot(vectorize(A), vectorize(B)))


class Superoperator:
    """Linear map on operators, stored as a d_out^2 x d_in^2 matrix.

    CP/TP flags are computed lazily and cached (tristate: True/False/None).
    """

    def __init__(self, matrix: np.ndarray, in_dim: int, out_dim: int):
        matrix = as_matrix(matrix)
        if matrix.shape != (out_dim * out_dim, in_dim * in_dim):
            raise ValueError(
                f"superoperator matrix shape {matrix.shape} does not match "
                f"dims {in_dim} -> {out_dim}"
            )
        self.matrix = matrix
        self.in_dim = in_dim
        self.out_dim = out_dim
        self._is_tp: bool | None = None
        self._is_cp: bool | None = None

    @classmethod
    def identity(cls, d: int) -> "Superoperator":
        return cls(np.eye(d * d, dtype=complex), d, d)

    @classmethod
    def from_kraus(cls, kraus: list[np.ndarray]) -> "Superoperator":
        if not kraus:
            raise ValueError("at least one Kraus operator is required")
        ops = [as_matrix(K) for K in kraus]
        shape = ops[0].shape
        if any(K.shape != shape for K in ops):
            raise ValueError("Kraus operators must share a common shape")
        out_dim, in_dim = shape
        mat = sum(kron(K, K.conj()) for K in ops)
        S = cls(mat, in_dim, out_dim)
        S._is_cp = True
        return S

    @classmethod
    def from_unitary(cls, U: np.ndarray) -> "Superoperator":
        U = as_matrix(U)
        d = U.shape[0]
        if np.linalg.norm(U @ U.conj().T - np.eye(d)) > 1e-10 * d:
            raise ValueError("matrix is not unitary")
        S = cls.from_kraus([U])
        S._is_tp = True
        return S

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return devectorize(self.matrix @ vectorize(rho))

    def compose(self, other: "Superoperator") -> "Superoperator":
        """self after other."""
        if other.out_dim != self.in_dim:
            raise ValueError("dimension mismatch in composition")
        return Superoperator(self.matrix @ other.matrix, other.in_dim, self.out_dim)

    def adjoint(self) -> "Superoperator":
        """Adjoint map for the trace inner product: <A, S(B)> = <S+(A), B>."""
        return Superoperator(self.matrix.conj().T, self.out_dim, self.in_dim)

    def choi(self) -> np.ndarray:
        """Choi matrix sum_ij S(Pi_ij) (x) Pi_ij, output factor first."""
        d, dp = self.in_dim, self.out_dim
        return (
            self.matrix.reshape(dp, dp, d, d)
            .transpose(0, 2, 1, 3)
            .reshape(dp * d, dp * d)
        )

    def is_trace_preserving(self, tol: float = TP_TOL) -> bool:
        if self._is_tp is None:
            iv = np.eye(self.out_dim, dtype=complex).reshape(-1)
            row = iv.conj() @ self.matrix
            target = np.eye(self.in_dim, dtype=complex).reshape(-1)
            self._is_tp = bool(np.linalg.norm(row - target) <= tol)
        return self._is_tp

    def is_completely_positive(self, tol: float = CP_TOL) -> bool:
        if self._is_cp is None:
            C = self.choi()
            herm = np.linalg.norm(C - C.conj().T) <= 1e-10 * max(
                1.0, np.linalg.norm(C)
            )
            if not herm:
                self._is_cp = False
            else:
                vals, _ = herm_eig(C)
                self._is_cp = bool(vals[0] >= -tol)
        return self._is_cp

    def choi_min_eigenvalue(self) -> float:
        C = self.choi()
        vals, _ = herm_eig((C + C.conj().T) / 2)
        return float(vals[0])

    def matrix_element(self, A: np.ndarray, B: np.ndarray) -> complex:
        """(A|S|B) = Tr(A^dag S(B))."""
        return complex(np.vdot(vectorize(A), self.matrix @ vectorize(B)))


def matrix_unit(d: int, i: int, j: int) -> np.ndarray:
    P = np.zeros((d, d), dtype=complex)
    P[i, j] = 1.0
    return P
