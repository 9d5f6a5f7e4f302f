"""Second-order pooling operators.

The trainable path is :func:`genvec_rank1`: for a per-node auto-correlation
``M = z z^T`` every row summary collapses to ``s(z) * z``, so the k x k matrix
is never built.  :func:`genvec` works on an explicit matrix and serves as the
slow reference.  Bilinear pooling and the factorized bilinear transform are
kept as baselines.

All row-wise functions accept a 1-D vector or a 2-D array of row vectors.
Ties in max / top-k' go to the lowest index.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class GenVecKind(str, Enum):
    MAX = "max"
    MEAN = "mean"
    DIAG = "diag"
    TOPK = "topk"
    UPPER = "upper"


TRAINABLE_KINDS = (GenVecKind.MAX, GenVecKind.MEAN, GenVecKind.DIAG, GenVecKind.TOPK)

_ALIASES = {
    "max": GenVecKind.MAX, "maxvec": GenVecKind.MAX,
    "mean": GenVecKind.MEAN, "meanvec": GenVecKind.MEAN,
    "diag": GenVecKind.DIAG, "diagvec": GenVecKind.DIAG,
    "topk": GenVecKind.TOPK, "topkvec": GenVecKind.TOPK,
    "upper": GenVecKind.UPPER, "uppervec": GenVecKind.UPPER,
}


@dataclass(frozen=True)
class GenVecOp:
    kind: GenVecKind
    k_prime: int = 3

    def __post_init__(self):
        object.__setattr__(self, "kind", GenVecKind(self.kind))
        if self.kind is GenVecKind.TOPK and self.k_prime < 1:
            raise ValueError(f"k_prime must be >= 1, got {self.k_prime}")

    @classmethod
    def parse(cls, name: str, k_prime: int = 3) -> "GenVecOp":
        try:
            kind = _ALIASES[name.strip().lower()]
        except KeyError:
            raise ValueError(
                f"unknown GenVec kind {name!r}; expected one of "
                f"{sorted(set(k.value for k in _ALIASES.values()))}") from None
        return cls(kind, k_prime)

    @property
    def name(self) -> str:
        return self.kind.value


MAXVEC = GenVecOp(GenVecKind.MAX)
MEANVEC = GenVecOp(GenVecKind.MEAN)
DIAGVEC = GenVecOp(GenVecKind.DIAG)
UPPERVEC = GenVecOp(GenVecKind.UPPER)


def topkvec(k_prime: int) -> GenVecOp:
    return GenVecOp(GenVecKind.TOPK, k_prime)


def _check_k_prime(g: GenVecOp, k: int) -> None:
    if g.k_prime > k:
        raise ValueError(f"k_prime={g.k_prime} exceeds vector length {k}")


def _topk_mask(x: np.ndarray, k_prime: int) -> np.ndarray:
    # stable sort on -x keeps lower indices first among equal values
    order = np.argsort(-x, axis=-1, kind="stable")[..., :k_prime]
    mask = np.zeros_like(x)
    np.put_along_axis(mask, order, 1.0, axis=-1)
    return mask


def _argmax_onehot(x: np.ndarray) -> np.ndarray:
    onehot = np.zeros_like(x)
    np.put_along_axis(onehot, np.argmax(x, axis=-1)[..., None], 1.0, axis=-1)
    return onehot


def upper_bound(p) -> float | np.ndarray:
    """Probability that at least one event fires: ``1 - prod(1 - p_j)``.

    Row-wise for 2-D input.  Exactly 1 whenever some ``p_j == 1``.
    """
    p = np.asarray(p, dtype=np.float64)
    if np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("upper_bound requires all entries in [0, 1]")
    out = 1.0 - np.prod(1.0 - p, axis=-1)
    out = np.where(np.any(p == 1.0, axis=-1), 1.0, out)
    return float(out) if out.ndim == 0 else out


def row_summary(x: np.ndarray, g: GenVecOp) -> np.ndarray:
    """Scalar summary s(x) of each row: max, mean, top-k' mean or upper bound.

    Mean and top-k' mean share one reduction (masked sum / count) so that
    top-k' with k' = k reproduces the mean bit for bit.
    """
    x = np.asarray(x, dtype=np.float64)
    k = x.shape[-1]
    if g.kind is GenVecKind.MAX:
        return np.max(x, axis=-1)
    if g.kind is GenVecKind.MEAN:
        return (x * np.ones_like(x)).sum(axis=-1) / k
    if g.kind is GenVecKind.TOPK:
        _check_k_prime(g, k)
        return (x * _topk_mask(x, g.k_prime)).sum(axis=-1) / g.k_prime
    if g.kind is GenVecKind.UPPER:
        return np.asarray(upper_bound(x))
    raise ValueError(f"{g.kind} has no scalar row summary")


def genvec(M, g: GenVecOp) -> np.ndarray:
    """Apply ``g`` to every row of an explicit square matrix ``M``."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"genvec needs a square matrix, got shape {M.shape}")
    if g.kind is GenVecKind.DIAG:
        return np.diag(M).copy()
    return row_summary(M, g)


def genvec_rank1(z, g: GenVecOp) -> np.ndarray:
    """GenVec of ``z z^T`` without forming it: ``s(z) * z`` (``z * z`` for DiagVec)."""
    z = np.asarray(z, dtype=np.float64)
    if g.kind is GenVecKind.DIAG:
        return z * z
    return row_summary(z, g)[..., None] * z


def genvec_rank1_backward(z, g: GenVecOp, upstream) -> np.ndarray:
    """Vector-Jacobian product of :func:`genvec_rank1` at ``z``.

    For y = s(z) z: dz = s(z) * up + (up . z) * ds/dz, where ds/dz is the
    one-hot argmax (MaxVec), 1/k (MeanVec) or the top-k' indicator / k'.
    """
    z = np.asarray(z, dtype=np.float64)
    up = np.asarray(upstream, dtype=np.float64)
    if z.shape != up.shape:
        raise ValueError(f"upstream shape {up.shape} does not match z shape {z.shape}")
    if g.kind is GenVecKind.DIAG:
        return 2.0 * z * up
    k = z.shape[-1]
    if g.kind is GenVecKind.MAX:
        ds = _argmax_onehot(z)
    elif g.kind is GenVecKind.MEAN:
        ds = np.full_like(z, 1.0 / k)
    elif g.kind is GenVecKind.TOPK:
        _check_k_prime(g, k)
        ds = _topk_mask(z, g.k_prime) / g.k_prime
    else:
        raise ValueError(f"{g.kind} is analysis-only and has no backward pass")
    s = row_summary(z, g)[..., None]
    dot = (up * z).sum(axis=-1, keepdims=True)
    return s * up + dot * ds


def upper_triangle(M) -> np.ndarray:
    """Row-major vectorization of the upper triangle (diagonal included)."""
    M = np.asarray(M, dtype=np.float64)
    iu = np.triu_indices(M.shape[-1])
    return M[..., iu[0], iu[1]]


def bilinear_pool(h, eps: float = 0.0) -> np.ndarray:
    """Upper-triangular vectorization of ``h h^T + eps I``; length d(d+1)/2.

    Accepts a single vector or a stack of row vectors.
    """
    h = np.asarray(h, dtype=np.float64)
    if eps < 0:
        raise ValueError("eps must be non-negative")
    d = h.shape[-1]
    iu, ju = np.triu_indices(d)
    out = h[..., iu] * h[..., ju]
    if eps:
        out = out + eps * (iu == ju)
    return out


def bilinear_pool_backward(h, upstream) -> np.ndarray:
    """Vector-Jacobian product of :func:`bilinear_pool` w.r.t. ``h``."""
    h = np.asarray(h, dtype=np.float64)
    up = np.asarray(upstream, dtype=np.float64)
    d = h.shape[-1]
    iu, ju = np.triu_indices(d)
    # scatter the packed upstream into a symmetric matrix G so that dh = (G + G^T) h
    G = np.zeros(h.shape[:-1] + (d, d))
    G[..., iu, ju] = up
    S = G + np.swapaxes(G, -1, -2)
    return np.einsum("...ij,...j->...i", S, h)


def fbp_transform(W, h, eps: float = 0.0) -> np.ndarray:
    """Factorized bilinear transform: upper triangle of ``(W h)(W h)^T + eps I``."""
    W = np.asarray(W, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if W.ndim != 2 or W.shape[1] != h.shape[-1]:
        raise ValueError(f"fbp_transform shape mismatch: W {W.shape}, h {h.shape}")
    return bilinear_pool(h @ W.T, eps)
