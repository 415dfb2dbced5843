"""Dense complex linear algebra primitives used throughout the package.

All matrices are plain numpy arrays (complex128, row-major). Dimensions in
practice stay at or below 16 (system times environment for qubit pairs), so
everything is dense and eigendecomposition-based.
"""

from __future__ import annotations

import math

import numpy as np

HERM_TOL = 1e-10
RANK_CUTOFF = 1e-12
SUPPORT_TOL = 1e-10


def frobenius(A: np.ndarray) -> float:
    return float(np.linalg.norm(A))


def as_matrix(A) -> np.ndarray:
    """Coerce to a 2-D complex array, rejecting NaN/Inf entries."""
    M = np.asarray(A, dtype=complex)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise ValueError(f"expected a matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M.real)) or not np.all(np.isfinite(M.imag)):
        raise ValueError("matrix contains non-finite entries")
    return M


def check_hermitian(A: np.ndarray, tol: float = HERM_TOL) -> np.ndarray:
    A = as_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    dev = frobenius(A - A.conj().T)
    if dev > tol * max(1.0, frobenius(A)):
        raise ValueError(f"matrix is not Hermitian (deviation {dev:.3e})")
    return (A + A.conj().T) / 2


def herm_eig(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix with a deterministic gauge.

    Returns (eigenvalues ascending, column eigenvectors). Each eigenvector is
    phase-fixed so its first component of significant modulus is real and
    positive; degenerate groups are then ordered lexicographically so the
    output is reproducible for identical input.
    """
    A = check_hermitian(A)
    vals, vecs = np.linalg.eigh(A)
    d = A.shape[0]
    for k in range(d):
        col = vecs[:, k]
        idx = int(np.argmax(np.abs(col) > 1e-8))
        phase = col[idx] / abs(col[idx])
        vecs[:, k] = col / phase
    # stable ordering inside degenerate groups
    scale = max(1.0, float(np.max(np.abs(vals))))
    order = list(range(d))
    start = 0
    while start < d:
        stop = start + 1
        while stop < d and vals[stop] - vals[start] <= 1e-10 * scale:
            stop += 1
        if stop - start > 1:
            block = sorted(
                range(start, stop),
                key=lambda k: tuple(
                    (round(c.real, 9), round(c.imag, 9)) for c in vecs[:, k]
                ),
            )
            order[start:stop] = block
        start = stop
    vals = vals[order]
    vecs = vecs[:, order]
    return vals, vecs


def mat_power(A: np.ndarray, alpha: float) -> np.ndarray:
    """A**alpha for Hermitian PSD A, restricted to the support for alpha < 0.

    Eigenvalues below RANK_CUTOFF relative to the largest one are treated as
    exactly zero (pseudo-power). Negative eigenvalues beyond tolerance are
    rejected.
    """
    vals, vecs = herm_eig(A)
    top = float(np.max(vals)) if len(vals) else 0.0
    if np.min(vals) < -1e-12 * max(1.0, top):
        raise ValueError(f"matrix is not PSD (min eigenvalue {np.min(vals):.3e})")
    cutoff = RANK_CUTOFF * max(top, 0.0)
    powered = np.zeros_like(vals)
    for k, lam in enumerate(vals):
        if lam > cutoff:
            powered[k] = lam**alpha
    return (vecs * powered) @ vecs.conj().T


def kron(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Kronecker product, first factor on the slow index."""
    return np.kron(as_matrix(A), as_matrix(B))


def partial_trace(A: np.ndarray, dims: tuple[int, ...], keep: int) -> np.ndarray:
    """Trace out every tensor factor of A except ``dims[keep]``."""
    A = as_matrix(A)
    dims = tuple(int(d) for d in dims)
    total = math.prod(dims)
    if A.shape != (total, total):
        raise ValueError(f"dims {dims} incompatible with matrix shape {A.shape}")
    if not 0 <= keep < len(dims):
        raise ValueError(f"keep index {keep} out of range for {len(dims)} factors")
    n = len(dims)
    traced = A.reshape(dims + dims)
    # trace factors from the highest axis down so indices stay valid
    for ax in sorted((k for k in range(n) if k != keep), reverse=True):
        traced = np.trace(traced, axis1=ax, axis2=ax + traced.ndim // 2)
    return traced


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    vals, _ = herm_eig(as_matrix(rho) - as_matrix(sigma))
    return float(np.sum(np.abs(vals)) / 2)


def relative_entropy(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Quantum relative entropy Tr rho (ln rho - ln sigma), in nats.

    Returns math.inf when rho carries more than SUPPORT_TOL weight outside the
    support of sigma. Uses 0 ln 0 = 0.
    """
    p, U = herm_eig(rho)
    q, V = herm_eig(sigma)
    top_q = float(np.max(q))
    support = q > RANK_CUTOFF * max(1.0, top_q)
    # weight of rho outside sigma's support
    if not np.all(support):
        kernel = V[:, ~support]
        outside = float(np.real(np.trace(kernel.conj().T @ rho @ kernel)))
        if outside > SUPPORT_TOL:
            return math.inf
    ent = 0.0
    for pi in p:
        if pi > RANK_CUTOFF:
            ent += float(pi * math.log(pi))
    overlap = np.abs(U.conj().T @ V) ** 2  # overlap[i, j] = |<u_i|v_j>|^2
    for j in range(len(q)):
        if support[j]:
            w = float(np.real(np.dot(p, overlap[:, j])))
            ent -= w * math.log(float(q[j]))
    return ent
