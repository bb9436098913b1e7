"""Truncated SVD and the two-factor split used for 1x1 convolutions."""
from dataclasses import dataclass

import numpy as np

from ._backend import kernels

__all__ = ["TruncatedSVD", "truncated_svd", "svd_split", "singular_values"]

_JACOBI_TOL = 4 * np.finfo(float).eps


@dataclass(frozen=True)
class TruncatedSVD:
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    @property
    def rank(self):
        return self.s.size

    def reconstruct(self):
        return (self.u * self.s) @ self.v.T


def _complete_orthonormal(q, k):
    """Replace columns ``k:`` of ``q`` by an orthonormal completion of ``q[:, :k]``."""
    m, n = q.shape
    if k >= n:
        return q
    basis, _ = np.linalg.qr(np.column_stack([q[:, :k], np.eye(m)]))
    out = q.copy()
    out[:, k:] = basis[:, k:n]
    return out


def _full_svd(a):
    """Thin SVD of ``a`` by one-sided Jacobi on the smaller Gram side."""
    transposed = a.shape[0] < a.shape[1]
    work = a.T if transposed else a
    w, v, _ = kernels.jacobi_svd(work, _JACOBI_TOL)
    s = np.linalg.norm(w, axis=0)
    order = np.argsort(-s, kind="stable")
    s, w, v = s[order], w[:, order], v[:, order]
    nonzero = int(np.sum(s > s[0] * 1e-15)) if s[0] > 0 else 0
    u = np.zeros_like(w)
    u[:, :nonzero] = w[:, :nonzero] / s[:nonzero]
    u = _complete_orthonormal(u, nonzero)
    s[nonzero:] = 0.0
    if transposed:
        u, v = v, u
    return u, s, v


def singular_values(a):
    """All min(m, n) singular values of ``a``, descending."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("singular_values expects a matrix")
    return _full_svd(a)[1]


def truncated_svd(a, r):
    """Leading-``r`` singular triplets of ``a``.

    Sign convention: the largest-magnitude entry of each ``u`` column is
    nonnegative (``v`` flips with it).
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("truncated_svd expects a matrix")
    if not 1 <= r <= min(a.shape):
        raise ValueError(f"rank {r} out of range [1, {min(a.shape)}]")
    u, s, v = _full_svd(a)
    u, s, v = u[:, :r].copy(), s[:r].copy(), v[:, :r].copy()
    idx = np.argmax(np.abs(u), axis=0)
    flip = u[idx, np.arange(r)] < 0
    u[:, flip] *= -1
    v[:, flip] *= -1
    for arr in (u, s, v):
        arr.flags.writeable = False
    return TruncatedSVD(u, s, v)


def svd_split(a, r):
    """Split a ``Cin x Cout`` 1x1 kernel matrix into ``w1 (Cin x r)`` and
    ``w2 (r x Cout)`` with ``w1 @ w2`` the best rank-``r`` approximation.

    With ``a = U S V^T``, ``w1 = U`` projects the input channels and
    ``w2 = S V^T`` expands to the outputs. In the ``Cout x Cin`` orientation
    (``y = A^T x``) these are the familiar ``V^T`` / ``U S`` pair.
    """
    svd = truncated_svd(a, r)
    return np.array(svd.u), svd.s[:, None] * svd.v.T
