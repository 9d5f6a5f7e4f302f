"""Dense/sparse primitives, seeded randomness and a finite-difference oracle.

Dense matrices are plain ``float64`` numpy arrays (row-major).  Sparse matrices
are ``scipy.sparse.csr_matrix`` kept in canonical form: sorted column indices
per row, no duplicates, no explicit zeros.  scipy's CSR-dense product walks each
row's stored entries in index order, so :func:`spmm` sums in ascending column
order and is bit-reproducible.
"""
from __future__ import annotations

import hashlib
from typing import Callable

import numpy as np
import scipy.sparse as sp


class Rng:
    """Seeded, splittable random stream.

    Backed by numpy's PCG64.  A child stream is keyed by ``(seed, *path)``
    through :class:`numpy.random.SeedSequence`, so ``rng.child("dropout")``
    yields the same stream no matter how much of the parent was consumed.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._path = _path
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=_path)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, key: str | int) -> "Rng":
        if isinstance(key, str):
            key = int.from_bytes(hashlib.sha256(key.encode()).digest()[:4], "little")
        return Rng(self.seed, self._path + (int(key),))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self._path})"


def as_dense(x) -> np.ndarray:
    """Copy-free conversion to a 2-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


def to_csr(x) -> sp.csr_matrix:
    """Canonical CSR: float64, sorted indices, duplicates summed, zeros dropped."""
    A = sp.csr_matrix(x, dtype=np.float64, copy=True)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def check_csr(A: sp.csr_matrix) -> None:
    """Raise if ``A`` violates the canonical CSR invariants."""
    if not sp.isspmatrix_csr(A):
        raise TypeError("expected a scipy.sparse.csr_matrix")
    if np.any(np.diff(A.indptr) < 0):
        raise ValueError("row offsets must be non-decreasing")
    for r in range(A.shape[0]):
        cols = A.indices[A.indptr[r]:A.indptr[r + 1]]
        if np.any(np.diff(cols) <= 0):
            raise ValueError(f"column indices of row {r} are not strictly increasing")
    if np.any(A.data == 0):
        raise ValueError("explicit zeros stored")
    if not np.all(np.isfinite(A.data)):
        raise ValueError("non-finite values stored")


def spmm(A: sp.csr_matrix, H: np.ndarray) -> np.ndarray:
    """Sparse @ dense product ``A H``."""
    H = np.asarray(H, dtype=np.float64)
    if A.shape[1] != H.shape[0]:
        raise ValueError(
            f"spmm dimension mismatch: A is {A.shape[0]}x{A.shape[1]}, "
            f"H has {H.shape[0]} rows")
    return np.asarray(A @ H)


def glorot_init(rows: int, cols: int, rng: Rng) -> np.ndarray:
    """Glorot-uniform matrix, entries in [-a, a] with a = sqrt(6 / (rows + cols))."""
    if rows < 1 or cols < 1:
        raise ValueError(f"glorot_init needs positive dimensions, got {rows}x{cols}")
    a = np.sqrt(6.0 / (rows + cols))
    return rng.generator.uniform(-a, a, size=(rows, cols))


def dropout_mask(rows: int, cols: int, rate: float, rng: Rng) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability ``rate``, else 1 / (1 - rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones((rows, cols))
    keep = rng.generator.random((rows, cols)) >= rate
    return keep * (1.0 / (1.0 - rate))


def finite_difference_grad(f: Callable[[np.ndarray], float], X, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a matrix.

    ``X`` is never modified.  Works for any array shape, including 0-d.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    X = np.array(X, dtype=np.float64)
    grad = np.empty_like(X)
    work = X.copy()
    for idx in np.ndindex(X.shape):
        orig = work[idx]
        work[idx] = orig + h
        fp = float(f(work))
        work[idx] = orig - h
        fm = float(f(work))
        work[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value near index {idx}")
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a, b) -> float:
    """||a - b|| / max(||a||, ||b||), 0 when both vanish."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)
