# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: direct convolution and one-sided Jacobi SVD."""
import numpy as np
cimport numpy as cnp

from . import _pykernels
from libc.math cimport sqrt, fabs, copysign

cnp.import_array()

NAME = "cython"

cdef int JACOBI_MAX_SWEEPS = 80
# from this many input channels per group the BLAS contraction wins
GEMM_MIN_CHANNELS = 8


def conv2d_direct(x, w, Py_ssize_t stride, Py_ssize_t padding, Py_ssize_t groups):
    if np.shape(w)[1] >= GEMM_MIN_CHANNELS:
        return _pykernels.conv2d_direct(x, w, stride, padding, groups)
    return conv2d_loop(x, w, stride, padding, groups)


def conv2d_loop(x, w, Py_ssize_t stride, Py_ssize_t padding, Py_ssize_t groups):
    x = np.asarray(x, dtype=np.float64)
    cdef const double[:, :, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t c_out = wv.shape[0], c_in_g = wv.shape[1]
    cdef Py_ssize_t kh = wv.shape[2], kw = wv.shape[3]
    cdef Py_ssize_t h_out = (h + 2 * padding - kh) // stride + 1
    cdef Py_ssize_t w_out = (wd + 2 * padding - kw) // stride + 1
    if h_out <= 0 or w_out <= 0:
        return np.zeros((c_out, max(h_out, 0), max(w_out, 0)))
    # padding once keeps the inner loop free of bounds tests
    cdef const double[:, :, ::1] xv = np.ascontiguousarray(
        np.pad(x, ((0, 0), (padding, padding), (padding, padding))))
    out = np.zeros((c_out, h_out, w_out))
    cdef double[:, :, ::1] ov = out
    cdef Py_ssize_t c_out_g = c_out // groups
    cdef Py_ssize_t t, s, oy, ox, j, i, cin, row
    cdef double wt
    with nogil:
        for t in range(c_out):
            for s in range(c_in_g):
                cin = (t // c_out_g) * c_in_g + s
                for j in range(kh):
                    for i in range(kw):
                        wt = wv[t, s, j, i]
                        for oy in range(h_out):
                            row = oy * stride + j
                            for ox in range(w_out):
                                ov[t, oy, ox] += wt * xv[cin, row, ox * stride + i]
    return out


def jacobi_svd(a, double tol):
    # columns stored as rows of the transpose for contiguous access
    cdef double[:, ::1] wt = np.array(np.asarray(a, dtype=np.float64).T, order="C")
    cdef Py_ssize_t n = wt.shape[0], m = wt.shape[1]
    cdef double[:, ::1] vt = np.eye(n)
    cdef Py_ssize_t p, q, k, sweep, used = 0
    cdef double alpha, beta, gamma, zeta, t, c, s, x0, x1
    cdef bint rotated
    if n < 2:
        return np.asarray(wt).T.copy(), np.asarray(vt).T.copy(), 0
    with nogil:
        for sweep in range(1, JACOBI_MAX_SWEEPS + 1):
            used = sweep
            rotated = False
            for p in range(n - 1):
                for q in range(p + 1, n):
                    alpha = 0.0
                    beta = 0.0
                    gamma = 0.0
                    for k in range(m):
                        alpha = alpha + wt[p, k] * wt[p, k]
                        beta = beta + wt[q, k] * wt[q, k]
                        gamma = gamma + wt[p, k] * wt[q, k]
                    if fabs(gamma) <= tol * sqrt(alpha * beta):
                        continue
                    rotated = True
                    zeta = (beta - alpha) / (2.0 * gamma)
                    t = copysign(1.0, zeta) / (fabs(zeta) + sqrt(1.0 + zeta * zeta))
                    c = 1.0 / sqrt(1.0 + t * t)
                    s = c * t
                    for k in range(m):
                        x0 = wt[p, k]
                        x1 = wt[q, k]
                        wt[p, k] = c * x0 - s * x1
                        wt[q, k] = s * x0 + c * x1
                    for k in range(n):
                        x0 = vt[p, k]
                        x1 = vt[q, k]
                        vt[p, k] = c * x0 - s * x1
                        vt[q, k] = s * x0 + c * x1
            if not rotated:
                break
    return np.asarray(wt).T.copy(), np.asarray(vt).T.copy(), used
