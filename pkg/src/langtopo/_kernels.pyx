# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled CSR neighbourhood kernels."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def neighbor_mean(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
                  const double[:, ::1] h):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = h.shape[1]
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t u, k, j, v
    cdef cnp.int64_t start, stop
    cdef double inv
    for u in range(n):
        start = indptr[u]
        stop = indptr[u + 1]
        if stop == start:
            continue
        inv = 1.0 / (stop - start)
        for k in range(start, stop):
            v = indices[k]
            for j in range(d):
                out[u, j] += h[v, j]
        for j in range(d):
            out[u, j] *= inv
    return out_arr


def neighbor_mean_transpose(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
                            const double[:, ::1] g):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = g.shape[1]
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t u, k, j, v
    cdef cnp.int64_t start, stop
    cdef double inv
    for u in range(n):
        start = indptr[u]
        stop = indptr[u + 1]
        if stop == start:
            continue
        inv = 1.0 / (stop - start)
        for k in range(start, stop):
            v = indices[k]
            for j in range(d):
                out[v, j] += g[u, j] * inv
    return out_arr
