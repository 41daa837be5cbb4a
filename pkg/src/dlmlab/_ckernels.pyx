# cython: language_level=3
"""Compiled kernels; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def logsumexp_rows(x):
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], k = xv.shape[1], i, j
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef double m, s
    with nogil:
        for i in range(n):
            m = xv[i, 0]
            for j in range(1, k):
                if xv[i, j] > m:
                    m = xv[i, j]
            s = 0.0
            for j in range(k):
                s += exp(xv[i, j] - m)
            ov[i] = m + log(s)
    return out


def conv2d_forward(x, w):
    cdef double[:, :, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, :, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t S = xv.shape[0], B = xv.shape[1], C = xv.shape[2]
    cdef Py_ssize_t H = xv.shape[3], W = xv.shape[4]
    cdef Py_ssize_t F = wv.shape[1], K = wv.shape[3]
    cdef Py_ssize_t Ho = H - K + 1, Wo = W - K + 1
    cdef Py_ssize_t s, b, f, c, i, j, u, v
    cdef double acc
    out = np.zeros((S, B, F, Ho, Wo), dtype=np.float64)
    cdef double[:, :, :, :, ::1] ov = out
    with nogil:
        for s in range(S):
            for b in range(B):
                for f in range(F):
                    for i in range(Ho):
                        for j in range(Wo):
                            acc = 0.0
                            for c in range(C):
                                for u in range(K):
                                    for v in range(K):
                                        acc += xv[s, b, c, i + u, j + v] * wv[s, f, c, u, v]
                            ov[s, b, f, i, j] = acc
    return out


def conv2d_grad_weight(x, g):
    cdef double[:, :, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, :, :, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t S = xv.shape[0], B = xv.shape[1], C = xv.shape[2]
    cdef Py_ssize_t F = gv.shape[2], Ho = gv.shape[3], Wo = gv.shape[4]
    cdef Py_ssize_t K = xv.shape[3] - Ho + 1
    cdef Py_ssize_t s, b, f, c, i, j, u, v
    cdef double acc
    out = np.zeros((S, F, C, K, K), dtype=np.float64)
    cdef double[:, :, :, :, ::1] ov = out
    with nogil:
        for s in range(S):
            for f in range(F):
                for c in range(C):
                    for u in range(K):
                        for v in range(K):
                            acc = 0.0
                            for b in range(B):
                                for i in range(Ho):
                                    for j in range(Wo):
                                        acc += gv[s, b, f, i, j] * xv[s, b, c, i + u, j + v]
                            ov[s, f, c, u, v] = acc
    return out


def conv2d_grad_input(g, w):
    cdef double[:, :, :, :, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef double[:, :, :, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t S = gv.shape[0], B = gv.shape[1], F = gv.shape[2]
    cdef Py_ssize_t Ho = gv.shape[3], Wo = gv.shape[4]
    cdef Py_ssize_t C = wv.shape[2], K = wv.shape[3]
    cdef Py_ssize_t s, b, f, c, i, j, u, v
    cdef double gval
    out = np.zeros((S, B, C, Ho + K - 1, Wo + K - 1), dtype=np.float64)
    cdef double[:, :, :, :, ::1] ov = out
    with nogil:
        for s in range(S):
            for b in range(B):
                for f in range(F):
                    for i in range(Ho):
                        for j in range(Wo):
                            gval = gv[s, b, f, i, j]
                            for c in range(C):
                                for u in range(K):
                                    for v in range(K):
                                        ov[s, b, c, i + u, j + v] += gval * wv[s, f, c, u, v]
    return out
