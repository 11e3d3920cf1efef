# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled cone projection: nonnegative orthant, second-order and PSD blocks in one pass."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_lapack cimport dsyevr

cnp.import_array()

cdef double SQRT2 = 1.4142135623730951


cdef void _soc(double* seg, Py_ssize_t dim) noexcept nogil:
    cdef double t = seg[0], ny = 0.0, a
    cdef Py_ssize_t i
    for i in range(1, dim):
        ny += seg[i] * seg[i]
    ny = sqrt(ny)
    if ny <= t:
        return
    if ny <= -t:
        for i in range(dim):
            seg[i] = 0.0
        return
    a = 0.5 * (t + ny)
    seg[0] = a
    for i in range(1, dim):
        seg[i] *= a / ny


cdef int _psd(double* seg, int n, double* A, double* w, double* Z, int* isuppz,
              double* work, int lwork, int* iwork, int liwork) noexcept nogil:
    cdef int i, j, k, k0, pos = 0, m = 0, info = 0, il = 0, iu = 0
    cdef double s, vl = 0.0, vu = 1e300, abstol = 0.0
    cdef char jobz = b'V', rng = b'A', uplo = b'L'
    # unpack column-major lower triangle
    for j in range(n):
        for i in range(j, n):
            s = seg[pos] if i == j else seg[pos] / SQRT2
            A[i + j * n] = s
            A[j + i * n] = s
            pos += 1
    dsyevr(&jobz, &rng, &uplo, &n, A, &n, &vl, &vu, &il, &iu, &abstol, &m, w, Z, &n,
           isuppz, work, &lwork, iwork, &liwork, &info)
    if info != 0:
        return info
    # eigenvalues ascend: skip the negative head
    k0 = 0
    while k0 < m and w[k0] <= 0.0:
        k0 += 1
    pos = 0
    for j in range(n):
        for i in range(j, n):
            s = 0.0
            for k in range(k0, m):
                s += Z[i + k * n] * w[k] * Z[j + k * n]
            seg[pos] = s if i == j else s * SQRT2
            pos += 1
    return 0


def project(double[::1] x, layout):
    """Project ``x`` onto the cone product in place; returns the LAPACK status (0 on success)."""
    cdef Py_ssize_t s = layout.nonneg[0], nn = layout.nonneg[1], i, b
    cdef cnp.int64_t[::1] soc_starts = layout.soc_starts
    cdef cnp.int64_t[::1] soc_dims = layout.soc_dims
    cdef cnp.int64_t[::1] psd_starts = layout.psd_starts
    cdef cnp.int64_t[::1] psd_sides = layout.psd_sides
    cdef int nmax = 1, n, info = 0
    cdef int lwork, liwork
    cdef double *A
    cdef double *w
    cdef double *Z
    cdef double *work
    cdef int *isuppz
    cdef int *iwork
    for i in range(nn):
        if x[s + i] < 0.0:
            x[s + i] = 0.0
    for b in range(soc_starts.shape[0]):
        _soc(&x[soc_starts[b]], soc_dims[b])
    if psd_starts.shape[0] == 0:
        return 0
    for b in range(psd_sides.shape[0]):
        if psd_sides[b] > nmax:
            nmax = <int>psd_sides[b]
    lwork = 26 * nmax + 64
    liwork = 10 * nmax + 16
    A = <double*>malloc(nmax * nmax * sizeof(double))
    w = <double*>malloc(nmax * sizeof(double))
    Z = <double*>malloc(nmax * nmax * sizeof(double))
    work = <double*>malloc(lwork * sizeof(double))
    isuppz = <int*>malloc(2 * nmax * sizeof(int))
    iwork = <int*>malloc(liwork * sizeof(int))
    try:
        with nogil:
            for b in range(psd_starts.shape[0]):
                n = <int>psd_sides[b]
                info = _psd(&x[psd_starts[b]], n, A, w, Z, isuppz, work, lwork, iwork, liwork)
                if info != 0:
                    break
    finally:
        free(A); free(w); free(Z); free(work); free(isuppz); free(iwork)
    return info
