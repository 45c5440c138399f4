# cython: language_level=3
"""Compiled hot kernels: fused dense layers, Adam and Polyak updates.

All arrays are float64 and C-contiguous. Matrix products go through the BLAS
shipped with scipy; elementwise work runs over flat pointers without
temporaries.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

DEF ACT_IDENTITY = 0
DEF ACT_TANH = 1
DEF ACT_RELU = 2


cdef inline void _gemm_rowmajor(char ta, char tb, int m, int n, int k,
                                double *a, int lda, double *b, int ldb,
                                double *c, int ldc, double beta) noexcept nogil:
    # Row-major C(m x n) = op(A) @ op(B), issued as the column-major transpose.
    cdef double one = 1.0
    dgemm(&tb, &ta, &n, &m, &k, &one, b, &ldb, a, &lda, &beta, c, &ldc)


def dense_forward(double[:, ::1] x, double[:, ::1] w, double[::1] b, int act):
    cdef int rows = x.shape[0]
    cdef int fan_in = x.shape[1]
    cdef int fan_out = w.shape[1]
    if w.shape[0] != fan_in or b.shape[0] != fan_out:
        raise ValueError("dense_forward: shape mismatch")
    out = np.empty((rows, fan_out), dtype=np.float64)
    if rows == 0:
        return out
    cdef double[:, ::1] y = out
    cdef double *yp = &y[0, 0]
    cdef Py_ssize_t i, n = <Py_ssize_t>rows * fan_out
    cdef double v
    with nogil:
        for i in range(rows):
            memcpy(yp + i * fan_out, &b[0], fan_out * sizeof(double))
        if fan_in > 0:
            _gemm_rowmajor(b'N', b'N', rows, fan_out, fan_in,
                           &x[0, 0], fan_in, &w[0, 0], fan_out,
                           yp, fan_out, 1.0)
        if act == ACT_RELU:
            for i in range(n):
                v = yp[i]
                yp[i] = v if v > 0.0 else 0.0
    if act == ACT_TANH:
        np.tanh(out, out=out)
    return out


def dense_backward(double[:, ::1] x, double[:, ::1] w, double[:, ::1] y,
                   double[:, ::1] gy, int act, bint need_dx, bint need_dw):
    cdef int rows = x.shape[0]
    cdef int fan_in = x.shape[1]
    cdef int fan_out = w.shape[1]
    cdef Py_ssize_t i, j, n = <Py_ssize_t>rows * fan_out
    cdef double v, yi
    cdef double[:, ::1] gz
    if act == ACT_IDENTITY:
        gz = gy
    else:
        gz = np.empty((rows, fan_out), dtype=np.float64)
    cdef double *gzp = &gz[0, 0]
    cdef double *gyp = &gy[0, 0]
    cdef double *yp = &y[0, 0]
    with nogil:
        if act == ACT_TANH:
            for i in range(n):
                v = yp[i]
                gzp[i] = gyp[i] * (1.0 - v * v)
        elif act == ACT_RELU:
            for i in range(n):
                # Load both operands unconditionally so the select is branch-free.
                v = gyp[i]
                yi = yp[i]
                gzp[i] = v if yi > 0.0 else 0.0

    gx_arr = None
    gw_arr = None
    gb_arr = None
    cdef double[:, ::1] gx
    cdef double[:, ::1] gw
    cdef double[::1] gb
    cdef double *gbp
    if need_dx:
        gx_arr = np.empty((rows, fan_in), dtype=np.float64)
        gx = gx_arr
        with nogil:
            _gemm_rowmajor(b'N', b'T', rows, fan_in, fan_out,
                           gzp, fan_out, &w[0, 0], fan_out,
                           &gx[0, 0], fan_in, 0.0)
    if need_dw:
        gw_arr = np.empty((fan_in, fan_out), dtype=np.float64)
        gb_arr = np.zeros(fan_out, dtype=np.float64)
        gw = gw_arr
        gb = gb_arr
        gbp = &gb[0]
        with nogil:
            _gemm_rowmajor(b'T', b'N', fan_in, fan_out, rows,
                           &x[0, 0], fan_in, gzp, fan_out,
                           &gw[0, 0], fan_out, 0.0)
            for i in range(rows):
                for j in range(fan_out):
                    gbp[j] += gzp[i * fan_out + j]
    return gx_arr, gw_arr, gb_arr


def adam_update(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double eps,
                double bias1, double bias2):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double gi, mi, vi
    if g.shape[0] != n or m.shape[0] != n or v.shape[0] != n:
        raise ValueError("adam_update: length mismatch")
    with nogil:
        for i in range(n):
            gi = g[i]
            mi = beta1 * m[i] + (1.0 - beta1) * gi
            vi = beta2 * v[i] + (1.0 - beta2) * (gi * gi)
            m[i] = mi
            v[i] = vi
            p[i] = p[i] - lr * (mi / bias1) / (sqrt(vi / bias2) + eps)


def polyak_update(double[::1] target, double[::1] source, double tau):
    cdef Py_ssize_t i, n = target.shape[0]
    cdef double keep = 1.0 - tau
    if source.shape[0] != n:
        raise ValueError("polyak_update: length mismatch")
    with nogil:
        for i in range(n):
            target[i] = keep * target[i] + tau * source[i]
