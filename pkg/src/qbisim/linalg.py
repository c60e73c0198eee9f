"""Hermitian eigensolver built on cyclic Jacobi rotations.

All spectral quantities in the toolkit (trace distance, positivity checks)
go through `jacobi_eigh` so the numeric behaviour is fully under our control
and reproducible across BLAS builds.  Matrices stay small (at most a few
hundred rows), where Jacobi is both accurate and fast enough.
"""

from __future__ import annotations

import numpy as np

from .errors import ConvergenceError

# Off-diagonal Frobenius norm below which a matrix counts as diagonal.
JACOBI_EPS = 1e-12

_MAX_SWEEPS = 100


def off_diagonal_norm(a: np.ndarray) -> float:
    """Frobenius norm of the off-diagonal part."""
    off = a - np.diag(np.diag(a))
    return float(np.sqrt(np.sum(np.abs(off) ** 2)))


def _rotate(a, v, p, q):
    """Zero a[p, q] (and a[q, p]) with a complex Jacobi rotation.

    The rotation is unitary, equal to the identity outside rows/columns p, q.
    Updates `a` and the eigenvector accumulator `v` in place.
    """
    apq = a[p, q]
    mag = abs(apq)
    phase = apq / mag  # e^{i phi}
    alpha = a[p, p].real
    beta = a[q, q].real
    # tan(2 theta) = 2|apq| / (alpha - beta), |theta| <= pi/4 for stability
    if alpha == beta:
        t = 1.0
    else:
        tau = (alpha - beta) / (2.0 * mag)
        t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau))
    c = 1.0 / np.sqrt(1.0 + t * t)
    s = t * c

    # column update: A <- A J with J[p,p]=c, J[q,p]=s e^{-i phi},
    # J[p,q]=-s e^{i phi}, J[q,q]=c
    col_p = a[:, p].copy()
    col_q = a[:, q].copy()
    a[:, p] = c * col_p + s * np.conj(phase) * col_q
    a[:, q] = -s * phase * col_p + c * col_q
    # row update: A <- J^dagger A
    row_p = a[p, :].copy()
    row_q = a[q, :].copy()
    a[p, :] = c * row_p + s * phase * row_q
    a[q, :] = -s * np.conj(phase) * row_p + c * row_q

    a[p, q] = 0.0
    a[q, p] = 0.0
    a[p, p] = a[p, p].real
    a[q, q] = a[q, q].real

    col_p = v[:, p].copy()
    col_q = v[:, q].copy()
    v[:, p] = c * col_p + s * np.conj(phase) * col_q
    v[:, q] = -s * phase * col_p + c * col_q


def jacobi_eigh(matrix: np.ndarray, eps: float = JACOBI_EPS):
    """Eigendecomposition of a Hermitian matrix by cyclic Jacobi sweeps.

    Returns (w, v) with eigenvalues `w` ascending and unitary `v` satisfying
    matrix ~= v @ diag(w) @ v^dagger.  Convergence is declared once the
    off-diagonal Frobenius norm drops below `eps`.
    """
    a = np.array(matrix, dtype=complex)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if n == 0:
        return np.zeros(0), np.zeros((0, 0), dtype=complex)
    v = np.eye(n, dtype=complex)
    if n == 1:
        return np.array([a[0, 0].real]), v

    for _ in range(_MAX_SWEEPS):
        off = off_diagonal_norm(a)
        if off < eps:
            break
        # rotating entries below the per-sweep threshold wastes sweeps
        threshold = off / (n * n)
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) > threshold:
                    _rotate(a, v, p, q)
    else:
        raise ConvergenceError(
            f"Jacobi failed to reach off-norm {eps} in {_MAX_SWEEPS} sweeps"
        )

    w = np.diag(a).real
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def jacobi_eigvalsh(matrix: np.ndarray, eps: float = JACOBI_EPS) -> np.ndarray:
    """Ascending eigenvalues of a Hermitian matrix."""
    w, _ = jacobi_eigh(matrix, eps)
    return w
