"""Structured matrix products used by the dictionary and sensing code.

All vectorization is column-major (Fortran order) throughout the package.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

_MAX_ENTRIES = 2**31


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {a.shape}")
    return a


def _check_size(*dims: int) -> None:
    total = 1
    for d in dims:
        total *= int(d)
    if total > _MAX_ENTRIES:
        raise OverflowError(f"product shape with {total} entries is too large")


def kron(a, b) -> np.ndarray:
    """Kronecker product; block (i, j) of the result is ``a[i, j] * b``."""
    a = _as_matrix(a)
    b = _as_matrix(b)
    _check_size(a.shape[0] * b.shape[0], a.shape[1] * b.shape[1])
    out = a[:, None, :, None] * b[None, :, None, :]
    return out.reshape(a.shape[0] * b.shape[0], a.shape[1] * b.shape[1])


def khatri_rao_col(a, b) -> np.ndarray:
    """Column-wise Khatri-Rao product ``a • b``.

    Column j of the result is ``kron(a[:, j], b[:, j])``.
    """
    a = _as_matrix(a)
    b = _as_matrix(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"column mismatch: {a.shape[1]} vs {b.shape[1]}")
    _check_size(a.shape[0] * b.shape[0], a.shape[1])
    return (a[:, None, :] * b[None, :, :]).reshape(a.shape[0] * b.shape[0], a.shape[1])


def khatri_rao_row(a, b) -> np.ndarray:
    """Row-wise Khatri-Rao (face-splitting) product ``a * b``.

    Row i of the result is ``kron(a[i, :], b[i, :])``.
    """
    a = _as_matrix(a)
    b = _as_matrix(b)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"row mismatch: {a.shape[0]} vs {b.shape[0]}")
    _check_size(a.shape[0], a.shape[1] * b.shape[1])
    return (a[:, :, None] * b[:, None, :]).reshape(a.shape[0], a.shape[1] * b.shape[1])


def vec(a) -> np.ndarray:
    """Stack the columns of ``a`` into one vector."""
    return np.asarray(a).reshape(-1, order="F")


def unvec(v, rows: int, cols: int) -> np.ndarray:
    """Inverse of :func:`vec`."""
    v = np.asarray(v)
    if v.ndim != 1 or v.size != rows * cols:
        raise ValueError(f"cannot reshape length {v.size} into {rows}x{cols}")
    return v.reshape(rows, cols, order="F")


def kron_selection(a, rB: int, cB: int) -> sp.csr_matrix:
    """Sparse matrix ``S`` with ``vec(kron(B, a)) == S @ vec(B)`` for any rB x cB ``B``.

    The block form is ``I_cB ⊗ [I_rB ⊗ a_1; ...; I_rB ⊗ a_cA]`` with ``a_j`` the
    columns of ``a``. Only the nonzero pattern is stored.
    """
    a = _as_matrix(a)
    rA, cA = a.shape
    if rB < 1 or cB < 1:
        raise ValueError("rB and cB must be positive")
    _check_size(rB * cB * rA * cA)
    # entry of vec(B ⊗ a) at (jB, jA, iB, iA) reads a[iA, jA] * B[iB, jB]
    jB, jA, iB, iA = np.meshgrid(
        np.arange(cB), np.arange(cA), np.arange(rB), np.arange(rA), indexing="ij"
    )
    rows = (((jB * cA + jA) * rB + iB) * rA + iA).ravel()
    cols = (jB * rB + iB).ravel()
    vals = a[iA, jA].ravel()
    keep = vals != 0
    shape = (rB * cB * rA * cA, rB * cB)
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=shape)


def hadamard_vec_identity_check(a, b, tol: float = 1e-12) -> bool:
    """Check ``vec(a ⊙ b) == diag(vec(a)) vec(b)`` numerically."""
    a = _as_matrix(a)
    b = _as_matrix(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    lhs = vec(a * b)
    rhs = np.diag(vec(a)) @ vec(b)
    return bool(np.linalg.norm(lhs - rhs) <= tol * max(1.0, np.linalg.norm(lhs)))


def relative_error(x, y) -> float:
    """``||x - y|| / max(||y||, tiny)`` on flattened arrays."""
    x = np.asarray(x)
    y = np.asarray(y)
    den = np.linalg.norm(y)
    return float(np.linalg.norm(x - y) / (den if den > 0 else 1.0))
