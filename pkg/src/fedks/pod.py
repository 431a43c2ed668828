"""Proper orthogonal decomposition through the spatial covariance matrix.

Snapshots are rows. The basis comes from the N x N covariance of the
mean-removed snapshots, diagonalized with cyclic Jacobi rotations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, NumericalError

MAX_SWEEPS = 60


@dataclass
class PODBasis:
    mean_field: np.ndarray
    modes: np.ndarray  # columns are modes
    eigenvalues: np.ndarray

    @property
    def n_modes(self) -> int:
        return self.modes.shape[1]


def jacobi_eigh(A, tol: float = 1e-15, max_sweeps: int = MAX_SWEEPS):
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi sweeps.

    Returns eigenvalues sorted nonincreasing and the matching orthonormal
    eigenvectors as columns.
    """
    A = np.array(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgument("jacobi_eigh needs a square matrix")
    n = A.shape[0]
    scale = max(1.0, float(np.abs(A).max(initial=0.0)))
    if np.abs(A - A.T).max(initial=0.0) > 1e-10 * scale:
        raise InvalidArgument("matrix is not symmetric within 1e-10")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    norm = np.linalg.norm(A)
    if norm == 0.0:
        return np.zeros(n), V

    for _ in range(max_sweeps):
        off = math.sqrt(2.0 * float(np.sum(np.triu(A, 1) ** 2)))
        if off <= tol * norm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                colp = A[:, p].copy()
                colq = A[:, q]
                A[:, p] = c * colp - s * colq
                A[:, q] = s * colp + c * colq
                rowp = A[p, :].copy()
                rowq = A[q, :]
                A[p, :] = c * rowp - s * rowq
                A[q, :] = s * rowp + c * rowq
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q]
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        raise NumericalError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")

    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


def compute_pod(snapshots, center: bool = True) -> PODBasis:
    """POD basis of a snapshot matrix (rows are samples).

    ``center=False`` skips mean removal; the mean field is then zero.
    """
    X = np.asarray(snapshots, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidArgument("snapshots must be a 2-D matrix")
    M = X.shape[0]
    if M < 2:
        raise InvalidArgument("POD needs at least two snapshots")
    mean = X.mean(axis=0) if center else np.zeros(X.shape[1])
    Xc = X - mean
    C = Xc.T @ Xc / M
    _, V = jacobi_eigh(C)
    # Rayleigh quotients from the snapshots themselves: forming C squares the
    # conditioning, so its small eigenvalues carry ~eps*|C| absolute error
    w = np.maximum(np.einsum("mj,mj->j", Xc @ V, Xc @ V) / M, 0.0)
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]
    # fix each mode's sign: largest-magnitude entry positive
    pivot = np.abs(V).argmax(axis=0)
    V = V * np.sign(V[pivot, np.arange(V.shape[1])])
    return PODBasis(mean, V, w)


def _check_rank(basis: PODBasis, R: int) -> None:
    if not 1 <= R <= basis.n_modes:
        raise InvalidArgument(f"R={R} outside [1, {basis.n_modes}]")


def project(basis: PODBasis, X, R: int) -> np.ndarray:
    _check_rank(basis, R)
    return (np.asarray(X, dtype=np.float64) - basis.mean_field) @ basis.modes[:, :R]


def reconstruct(basis: PODBasis, coefficients, R: int) -> np.ndarray:
    _check_rank(basis, R)
    return basis.mean_field + np.asarray(coefficients) @ basis.modes[:, :R].T


def reconstruction_mse(basis: PODBasis, X, R: int) -> float:
    X = np.asarray(X, dtype=np.float64)
    Xr = reconstruct(basis, project(basis, X, R), R)
    return float(np.mean((X - Xr) ** 2))


def truncated_energy_mse(basis: PODBasis, R: int) -> float:
    """Training-set MSE predicted from the discarded eigenvalues."""
    _check_rank(basis, R)
    return float(basis.eigenvalues[R:].sum() / basis.modes.shape[0])
