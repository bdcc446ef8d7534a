# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels (CSR products, sweeps, fused vector primitives).

Signature-compatible with ``mrsolve.kernels.python_ref``; see that
module for the shared conventions.
"""

import numpy as np

cimport cython
from libc.stdint cimport int64_t, uint8_t, uint16_t, uint32_t

BACKEND = "cython"

MODE_ASSIGN = 0
MODE_ADD = 1
MODE_SUB = 2
MODE_RSUB = 3

ctypedef fused idx_t:
    uint8_t
    uint16_t
    uint32_t

ctypedef fused val_t:
    float
    double


def csr_spmv(const int64_t[::1] row_ptr, idx_t[::1] col_idx, val_t[::1] values,
             const double[:, ::1] x, double[:, ::1] y, int mode,
             const double[:, ::1] b=None):
    cdef Py_ssize_t nrows = row_ptr.shape[0] - 1
    cdef Py_ssize_t m = x.shape[1]
    cdef Py_ssize_t i, j, k, lo, hi, col
    cdef double v
    for i in range(nrows):
        lo = row_ptr[i]
        hi = row_ptr[i + 1]
        if mode == MODE_ASSIGN:
            for j in range(m):
                y[i, j] = 0.0
        elif mode == MODE_RSUB:
            for j in range(m):
                y[i, j] = b[i, j]
        if mode == MODE_ASSIGN or mode == MODE_ADD:
            for k in range(lo, hi):
                v = <double> values[k]
                col = col_idx[k]
                for j in range(m):
                    y[i, j] += v * x[col, j]
        else:
            for k in range(lo, hi):
                v = <double> values[k]
                col = col_idx[k]
                for j in range(m):
                    y[i, j] -= v * x[col, j]


def gs_sweep(const int64_t[::1] row_ptr, idx_t[::1] col_idx, val_t[::1] values,
             const int64_t[::1] diag_pos, const double[:, ::1] b,
             const double[:, ::1] c, double[:, ::1] x, bint forward):
    cdef Py_ssize_t nrows = row_ptr.shape[0] - 1
    cdef Py_ssize_t m = x.shape[1]
    cdef Py_ssize_t ii, i, j, k, lo, hi, col, dp
    cdef double d, v
    for ii in range(nrows):
        i = ii if forward else nrows - 1 - ii
        lo = row_ptr[i]
        hi = row_ptr[i + 1]
        dp = diag_pos[i]
        d = <double> values[dp]
        for j in range(m):
            v = b[i, j] - c[i, j]
            for k in range(lo, hi):
                if k != dp:
                    v -= (<double> values[k]) * x[col_idx[k], j]
            x[i, j] = v / d
    return None


def axpby(const double[::1] a, const double[:, ::1] x,
          const double[::1] b, double[:, ::1] y):
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t m = y.shape[1]
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(m):
            y[i, j] = b[j] * y[i, j] + a[j] * x[i, j]


def add2_scaled(double[:, ::1] y, const double[::1] a, const double[:, ::1] u,
                const double[::1] b, const double[:, ::1] v):
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t m = y.shape[1]
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(m):
            y[i, j] = y[i, j] + a[j] * u[i, j] + b[j] * v[i, j]


def dot_partial(const double[:, ::1] x, const double[:, ::1] y):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t m = x.shape[1]
    cdef Py_ssize_t i, j
    out = np.zeros(m)
    cdef double[::1] acc = out
    for i in range(n):
        for j in range(m):
            acc[j] += x[i, j] * y[i, j]
    return out


def fused_update_dot(const double[::1] a, const double[:, ::1] x,
                     const double[::1] b, double[:, ::1] y):
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t m = y.shape[1]
    cdef Py_ssize_t i, j
    cdef double t
    out = np.zeros(m)
    cdef double[::1] acc = out
    for i in range(n):
        for j in range(m):
            t = b[j] * y[i, j] + a[j] * x[i, j]
            y[i, j] = t
            acc[j] += t * t
    return out


def fused_paired_update(double[:, ::1] y1, const double[::1] a,
                        const double[:, ::1] u, const double[::1] b,
                        const double[:, ::1] s, double[:, ::1] y2,
                        const double[::1] c, const double[:, ::1] w):
    cdef Py_ssize_t n = y1.shape[0]
    cdef Py_ssize_t m = y1.shape[1]
    cdef Py_ssize_t i, j
    cdef double sv
    for i in range(n):
        for j in range(m):
            sv = s[i, j]
            y1[i, j] = y1[i, j] + a[j] * u[i, j] + b[j] * sv
            y2[i, j] = sv - c[j] * w[i, j]


def fused_update_dot2(double[:, ::1] y, const double[:, ::1] u,
                      const double[::1] c, const double[:, ::1] w,
                      const double[:, ::1] z):
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t m = y.shape[1]
    cdef Py_ssize_t i, j
    cdef double t
    d1 = np.zeros(m)
    d2 = np.zeros(m)
    cdef double[::1] a1 = d1
    cdef double[::1] a2 = d2
    for i in range(n):
        for j in range(m):
            t = u[i, j] - c[j] * w[i, j]
            y[i, j] = t
            a1[j] += z[i, j] * t
            a2[j] += t * t
    return d1, d2
