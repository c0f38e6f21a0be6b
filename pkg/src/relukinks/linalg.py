"""Small dense symmetric eigenproblems via cyclic Jacobi rotations."""
from __future__ import annotations

import numpy as np

from .errors import NumericalError


def jacobi_eigh(S, tol: float = 1e-14, max_sweeps: int = 64):
    """Eigenvalues (descending) and orthonormal eigenvectors (columns) of a symmetric matrix.

    Sweeps cyclically over the off-diagonal pairs until the off-diagonal
    Frobenius norm falls below ``tol`` times the matrix norm.
    """
    A = np.array(S, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or not np.all(np.isfinite(A)):
        raise NumericalError("jacobi_eigh needs a finite square matrix")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    scale = max(np.linalg.norm(A), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                g = 100.0 * abs(apq)
                if abs(A[p, p]) + g == abs(A[p, p]) and abs(A[q, q]) + g == abs(A[q, q]):
                    A[p, q] = A[q, p] = 0.0
                    continue
                diff = A[q, q] - A[p, p]
                if abs(diff) + g == abs(diff):
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta < 0:
                        t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                A = rot.T @ A @ rot
                A[p, q] = A[q, p] = 0.0
                V = V @ rot
    else:
        raise NumericalError("Jacobi eigensolver did not converge")
    vals = np.diag(A).copy()
    order = np.argsort(vals)[::-1]
    return vals[order], V[:, order]


def sym_sqrt(S) -> np.ndarray:
    """Symmetric square root of a positive semidefinite matrix."""
    vals, vecs = jacobi_eigh(S)
    if vals[-1] < -1e-12 * max(1.0, abs(vals[0])):
        raise NumericalError("matrix is not positive semidefinite")
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
