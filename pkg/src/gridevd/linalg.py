"""Small dense linear-algebra kernel.

Matrices are plain ``numpy.ndarray`` values. The routines here are sized for
power networks of a few dozen buses: LU with partial pivoting for linear
solves and a cyclic Jacobi rotation scheme for symmetric eigenproblems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gridevd.errors import ContractError, DegenerateError, SingularMatrixError

PIVOT_RTOL = 1e-12
SYMMETRY_RTOL = 1e-9
JACOBI_RTOL = 1e-12
JACOBI_MAX_SWEEPS = 100


@dataclass(frozen=True)
class EigenPairs:
    """Eigenvalues in descending order with matching orthonormal columns."""

    values: np.ndarray
    vectors: np.ndarray

    def __iter__(self):
        return iter((self.values, self.vectors))


def lu_factor(A):
    """Factor ``P A = L U`` in place on a copy.

    Returns the packed LU matrix and the row permutation. Raises
    :class:`SingularMatrixError` when a pivot falls below
    ``PIVOT_RTOL * max|A|``.
    """
    A = np.array(A, dtype=float if not np.iscomplexobj(A) else complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {A.shape}")
    n = A.shape[0]
    scale = np.max(np.abs(A)) if A.size else 0.0
    if scale == 0.0:
        raise SingularMatrixError("matrix is identically zero", pivot=0)
    perm = np.arange(n)
    for k in range(n):
        p = k + int(np.argmax(np.abs(A[k:, k])))
        if abs(A[p, k]) < PIVOT_RTOL * scale:
            raise SingularMatrixError(f"singular matrix: pivot {k} is {abs(A[p, k]):.3e}", pivot=k)
        if p != k:
            A[[k, p]] = A[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        A[k + 1 :, k] /= A[k, k]
        A[k + 1 :, k + 1 :] -= np.outer(A[k + 1 :, k], A[k, k + 1 :])
    return A, perm


def lu_solve(lu, perm, B):
    B = np.asarray(B)
    vector = B.ndim == 1
    X = np.array(B[perm], dtype=np.result_type(lu, B, float))
    if vector:
        X = X[:, None]
    n = lu.shape[0]
    for k in range(n):
        X[k + 1 :] -= np.outer(lu[k + 1 :, k], X[k])
    for k in range(n - 1, -1, -1):
        X[k] /= lu[k, k]
        X[:k] -= np.outer(lu[:k, k], X[k])
    return X[:, 0] if vector else X


def solve_linear(A, B):
    """Solve ``A X = B`` for square nonsingular ``A``; ``B`` may be a vector or a matrix."""
    A = np.asarray(A)
    B = np.asarray(B)
    if B.shape[0] != A.shape[0]:
        raise ContractError(f"right-hand side has {B.shape[0]} rows, matrix has {A.shape[0]}")
    lu, perm = lu_factor(A)
    return lu_solve(lu, perm, B)


def _check_symmetric(N) -> np.ndarray:
    N = np.asarray(N, dtype=float)
    if N.ndim != 2 or N.shape[0] != N.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {N.shape}")
    norm = np.max(np.sum(np.abs(N), axis=1)) if N.size else 0.0
    asym = np.max(np.sum(np.abs(N - N.T), axis=1)) if N.size else 0.0
    if asym > SYMMETRY_RTOL * norm:
        raise ContractError(f"matrix is not symmetric (asymmetry {asym:.3e}, norm {norm:.3e})")
    return 0.5 * (N + N.T)


def _canonical_sign(vectors: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def eig_symmetric(N) -> EigenPairs:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps run until the off-diagonal Frobenius norm drops below
    ``JACOBI_RTOL * ||N||_F`` (at most ``JACOBI_MAX_SWEEPS``). Values come
    back in descending order, ties kept in original index order, and each
    vector is signed so that its largest-magnitude entry is positive.
    """
    A = _check_symmetric(N).copy()
    n = A.shape[0]
    V = np.eye(n)
    total = np.linalg.norm(A)
    if total > 0.0:
        threshold = JACOBI_RTOL * total
        for _ in range(JACOBI_MAX_SWEEPS):
            off = np.sqrt(max(np.sum(A * A) - np.sum(np.diag(A) ** 2), 0.0))
            if off <= threshold:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = A[p, q]
                    if apq == 0.0:
                        continue
                    # negligible next to both diagonals: drop it rather than rotate
                    g = 100.0 * abs(apq)
                    if abs(A[p, p]) + g == abs(A[p, p]) and abs(A[q, q]) + g == abs(A[q, q]):
                        A[p, q] = A[q, p] = 0.0
                        continue
                    theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                    c = 1.0 / np.sqrt(t * t + 1.0)
                    s = t * c
                    ap = A[:, p].copy()
                    aq = A[:, q].copy()
                    A[:, p] = c * ap - s * aq
                    A[:, q] = s * ap + c * aq
                    rp = A[p, :].copy()
                    rq = A[q, :].copy()
                    A[p, :] = c * rp - s * rq
                    A[q, :] = s * rp + c * rq
                    vp = V[:, p].copy()
                    V[:, p] = c * vp - s * V[:, q]
                    V[:, q] = s * vp + c * V[:, q]
    values = np.diag(A).copy()
    order = np.argsort(-values, kind="stable")
    return EigenPairs(values[order], _canonical_sign(V[:, order]))


def max_eigenpair(N) -> tuple[float, np.ndarray]:
    """Largest eigenvalue of a symmetric PSD matrix and its unit eigenvector."""
    N = np.asarray(N, dtype=float)
    if not np.any(N):
        raise DegenerateError("matrix is zero; there is no direction of improvement")
    pairs = eig_symmetric(N)
    return float(pairs.values[0]), pairs.vectors[:, 0]


def top_left_singular(A) -> tuple[float, np.ndarray]:
    """Largest singular value of ``A`` and its left singular vector.

    Computed as the top eigenpair of ``A A^T``, which is what makes
    ``sigma_1**2`` equal to the largest achievable quadratic form.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not np.any(A):
        raise DegenerateError("matrix is zero; it has no dominant singular direction")
    lam, u = max_eigenpair(A @ A.T)
    return float(np.sqrt(max(lam, 0.0))), u
