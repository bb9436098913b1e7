"""Pure-numpy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable, or when
``LWCK_PURE_PYTHON=1`` is set. Signatures match the Cython module exactly.
"""
import numpy as np

NAME = "python"

_JACOBI_MAX_SWEEPS = 80


def conv2d_direct(x, w, stride, padding, groups):
    """Direct 2-D cross-correlation of a single C x H x W input.

    Vectorized over output positions; the reduction over kernel taps and
    input channels is the same sum the naive seven-deep loop performs.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    c_in, h, wd = x.shape
    c_out, c_in_g, kh, kw = w.shape
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((c_out, h_out, w_out))
    if h_out <= 0 or w_out <= 0:
        return out
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    c_out_g = c_out // groups
    for g in range(groups):
        xs = xp[g * c_in_g:(g + 1) * c_in_g]
        wg = w[g * c_out_g:(g + 1) * c_out_g]
        acc = out[g * c_out_g:(g + 1) * c_out_g]
        for j in range(kh):
            for i in range(kw):
                patch = xs[:, j:j + stride * h_out:stride, i:i + stride * w_out:stride]
                acc += np.tensordot(wg[:, :, j, i], patch, axes=(1, 0))
    return out


def _round_robin(n):
    """Tournament schedule: n-1 (or n) rounds of disjoint column pairs."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[k], players[m - 1 - k]) for k in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p >= 0 and q >= 0]
        if pairs:
            p, q = zip(*pairs)
            rounds.append((np.array(p), np.array(q)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def jacobi_svd(a, tol):
    """One-sided Jacobi on the columns of a tall matrix.

    Returns ``(w, v, sweeps)`` with ``a @ v == w`` and the columns of ``w``
    mutually orthogonal; singular values are the column norms of ``w``.
    """
    w = np.array(a, dtype=np.float64, order="F")
    m, n = w.shape
    v = np.eye(n, order="F")
    if n < 2:
        return w, v, 0
    rounds = _round_robin(n)
    for sweep in range(1, _JACOBI_MAX_SWEEPS + 1):
        rotated = False
        for p, q in rounds:
            wp, wq = w[:, p], w[:, q]
            alpha = np.einsum("ij,ij->j", wp, wp)
            beta = np.einsum("ij,ij->j", wq, wq)
            gamma = np.einsum("ij,ij->j", wp, wq)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not active.any():
                continue
            rotated = True
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.copysign(1.0, zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            for mat in (w, v):
                mp, mq = mat[:, p].copy(), mat[:, q]
                mat[:, p] = c * mp - s * mq
                mat[:, q] = s * mp + c * mq
        if not rotated:
            return w, v, sweep
    return w, v, _JACOBI_MAX_SWEEPS
