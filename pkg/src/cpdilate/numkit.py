"""Dense complex linear algebra substrate.

Every threshold in the package flows from a single :class:`Tolerance`.
Ranks and kernels come from the singular value decomposition with a
threshold relative to the largest singular value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, InvalidInput


@dataclass(frozen=True)
class Tolerance:
    """Numerical tolerances.

    :param rank_rel: singular values below ``rank_rel * sigma_max`` count as zero.
    :param eq_rel: Frobenius-relative threshold for equality tests.
    """

    rank_rel: float = 1e-9
    eq_rel: float = 1e-8

    def __post_init__(self):
        if not (self.rank_rel > 0 and self.eq_rel > 0):
            raise InvalidInput("tolerances must be strictly positive")
        if not (np.isfinite(self.rank_rel) and np.isfinite(self.eq_rel)):
            raise InvalidInput("tolerances must be finite")


DEFAULT_TOL = Tolerance()


def as_cmatrix(m, rows: Optional[int] = None, cols: Optional[int] = None) -> np.ndarray:
    """Coerce ``m`` to a finite 2-d complex array, optionally checking its shape."""
    a = np.asarray(m, dtype=complex)
    if a.ndim == 1 and rows is None and cols is None:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise InvalidInput(f"expected a matrix, got an array of shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput("matrix has non-finite entries")
    if rows is not None and a.shape[0] != rows:
        raise DimensionMismatch(f"expected {rows} rows, got {a.shape[0]}")
    if cols is not None and a.shape[1] != cols:
        raise DimensionMismatch(f"expected {cols} columns, got {a.shape[1]}")
    return a


def _svd(a: np.ndarray, full: bool = True):
    if a.size == 0:
        return (np.eye(a.shape[0], dtype=complex), np.zeros(0),
                np.eye(a.shape[1], dtype=complex))
    try:
        return np.linalg.svd(a, full_matrices=full)
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(a, full_matrices=full, lapack_driver="gesvd")


def _rank_from_singular_values(s: np.ndarray, tol: Tolerance) -> int:
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol.rank_rel * s[0]))


def numerical_rank(m, tol: Tolerance = DEFAULT_TOL) -> int:
    """Number of singular values above ``rank_rel * sigma_max``; 0 for the zero matrix."""
    a = as_cmatrix(m)
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    return _rank_from_singular_values(s, tol)


def kernel_basis(m, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Orthonormal basis (as columns) of the numerical null space of ``m``."""
    a = as_cmatrix(m)
    _, s, vh = _svd(a)
    r = _rank_from_singular_values(s, tol)
    return vh[r:].conj().T


def range_basis(m, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Orthonormal basis (as columns) of the numerical column space of ``m``."""
    a = as_cmatrix(m)
    if a.size == 0:
        return np.zeros((a.shape[0], 0), dtype=complex)
    norms = np.linalg.norm(a, axis=0)
    a = a[:, norms > 1e-15 * max(float(norms.max()), 1e-300)]
    if a.shape[1] > a.shape[0]:
        # A = R^* Q^* has the range and singular values of the square R^*
        a = scipy.linalg.qr(a.conj().T, mode="r", check_finite=False)[0][:a.shape[0]].conj().T
    u, s, _ = _svd(a, full=False)
    r = _rank_from_singular_values(s, tol)
    return u[:, :r]


def orth_complement(basis: np.ndarray, dim: int, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of span(basis) in C^dim."""
    b = np.asarray(basis, dtype=complex).reshape(dim, -1)
    if b.shape[1] == 0:
        return np.eye(dim, dtype=complex)
    return kernel_basis(b.conj().T, tol)


def frob(a) -> float:
    return float(np.linalg.norm(np.asarray(a)))


def rel_close(a, b, tol: Tolerance = DEFAULT_TOL, scale: Optional[float] = None) -> bool:
    """Frobenius-relative equality ``||a-b|| <= eq_rel * max(||a||, ||b||, scale)``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        return False
    ref = max(frob(a), frob(b), scale if scale is not None else 1.0)
    return frob(a - b) <= tol.eq_rel * ref


def psd_sqrt(a, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Square root of a Hermitian positive semidefinite matrix (small negative eigenvalues clipped)."""
    h = as_cmatrix(a)
    if h.size == 0:
        return h.copy()
    h = (h + h.conj().T) / 2
    w, v = np.linalg.eigh(h)
    scale = max(np.max(np.abs(w)), 1.0)
    if np.min(w) < -tol.eq_rel * scale:
        raise InvalidInput(f"matrix is not positive semidefinite (min eigenvalue {np.min(w):.3e})")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def min_eigenvalue(a) -> float:
    h = as_cmatrix(a)
    if h.size == 0:
        return 0.0
    return float(np.min(np.linalg.eigvalsh((h + h.conj().T) / 2)))


@dataclass(frozen=True)
class CompletionResult:
    """Outcome of :func:`unitary_completion_exists`.

    ``unitary`` is the witness U (with ``X U^T = Y``) when ``exists`` holds;
    ``residual`` is the Gram residual ``||X X* - Y Y*||_F``.
    """

    exists: bool
    unitary: Optional[np.ndarray]
    residual: float
    reason: str = ""


def unitary_completion_exists(x_stack, y_stack, tol: Tolerance = DEFAULT_TOL) -> CompletionResult:
    """Decide whether a unitary U with ``X U^T = Y`` exists.

    Polar criterion: such U exists iff the column counts agree and
    ``X X* = Y Y*``.  The witness comes from the orthogonal Procrustes
    problem, whose minimiser attains zero whenever an exact solution exists.
    """
    x = as_cmatrix(x_stack)
    y = as_cmatrix(y_stack)
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"row counts differ: {x.shape[0]} vs {y.shape[0]}")
    gx = x @ x.conj().T
    gy = y @ y.conj().T
    residual = frob(gx - gy)
    if x.shape[1] != y.shape[1]:
        return CompletionResult(False, None, residual, "column counts differ")
    scale = max(frob(gx), frob(gy))
    if residual > tol.eq_rel * max(scale, 1e-300) and residual > 0.0:
        return CompletionResult(False, None, residual, "Gram matrices differ")
    d = x.shape[1]
    if d == 0:
        return CompletionResult(True, np.zeros((0, 0), dtype=complex), residual)
    u, _, vh = _svd(x.conj().T @ y)
    v = u @ vh  # X v ~ Y
    witness = v.T
    return CompletionResult(True, witness, residual)
