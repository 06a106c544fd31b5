# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled polynomial hot loops; see :mod:`isf._pykernels` for the reference."""
import numpy as np
cimport numpy as cnp

ctypedef fused scalar:
    double
    double complex


def monomials(scalar[:, ::1] X, const long[::1] parent, const long[::1] var):
    cdef Py_ssize_t N = X.shape[0], K = parent.shape[0], i, k
    dtype = np.float64 if scalar is double else np.complex128
    out_arr = np.empty((N, K), dtype=dtype)
    cdef scalar[:, ::1] out = out_arr
    for i in range(N):
        out[i, 0] = 1.0
        for k in range(1, K):
            out[i, k] = out[i, parent[k]] * X[i, var[k]]
    return out_arr


def monomial_grad(scalar[:, ::1] Phi, const long[:, ::1] down, const long[:, ::1] exps):
    cdef Py_ssize_t N = Phi.shape[0], K = Phi.shape[1], n = down.shape[1]
    cdef Py_ssize_t i, k, j
    cdef long d
    dtype = np.float64 if scalar is double else np.complex128
    out_arr = np.zeros((N, K, n), dtype=dtype)
    cdef scalar[:, :, ::1] out = out_arr
    for i in range(N):
        for k in range(K):
            for j in range(n):
                d = down[k, j]
                if d >= 0:
                    out[i, k, j] = Phi[i, d] * exps[k, j]
    return out_arr


def truncated_product(scalar[:, ::1] a, scalar[:, ::1] b,
                      const long[::1] ti, const long[::1] tj, const long[::1] tt):
    cdef Py_ssize_t B = a.shape[0], K = a.shape[1], P = ti.shape[0], r, p
    dtype = np.float64 if scalar is double else np.complex128
    out_arr = np.zeros((B, K), dtype=dtype)
    cdef scalar[:, ::1] c = out_arr
    for r in range(B):
        for p in range(P):
            c[r, tt[p]] += a[r, ti[p]] * b[r, tj[p]]
    return out_arr
