# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: row scatter-add and fused row softmax."""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def scatter_add_rows(out, idx, src):
    """Adds src[e] into out[idx[e]] for every e, in increasing e. Returns out."""
    cdef double[:, ::1] o = out
    cdef cnp.int64_t[::1] ix = idx
    cdef double[:, ::1] s = src
    cdef Py_ssize_t m = ix.shape[0]
    cdef Py_ssize_t d = o.shape[1]
    cdef Py_ssize_t e, j, row
    for e in range(m):
        row = ix[e]
        for j in range(d):
            o[row, j] += s[e, j]
    return out


def softmax_rows(x):
    """Row-wise softmax of a 2-D array. Rows may contain -inf (masked) entries."""
    cdef double[:, ::1] xv = x
    cdef Py_ssize_t n = xv.shape[0]
    cdef Py_ssize_t d = xv.shape[1]
    out = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    cdef double m, s, v
    for i in range(n):
        m = xv[i, 0]
        for j in range(1, d):
            if xv[i, j] > m:
                m = xv[i, j]
        s = 0.0
        for j in range(d):
            v = exp(xv[i, j] - m)
            ov[i, j] = v
            s += v
        for j in range(d):
            ov[i, j] /= s
    return out


def softmax_grad_rows(y, dy):
    """Backward of softmax_rows: dx = y * (dy - sum(y * dy, row))."""
    cdef double[:, ::1] yv = y
    cdef double[:, ::1] dv = dy
    cdef Py_ssize_t n = yv.shape[0]
    cdef Py_ssize_t d = yv.shape[1]
    out = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    cdef double dot
    for i in range(n):
        dot = 0.0
        for j in range(d):
            dot += yv[i, j] * dv[i, j]
        for j in range(d):
            ov[i, j] = yv[i, j] * (dv[i, j] - dot)
    return out
