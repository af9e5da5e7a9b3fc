# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: similarity matrices, threshold adjacency, score propagation.

Each output element is produced by exactly one thread (or one BLAS call
on a fixed block) with a fixed accumulation order, so results do not
depend on ``threads``.
"""
import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport fabs
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline double _clamp(double v) noexcept nogil:
    if v > 1.0:
        return 1.0
    if v < -1.0:
        return -1.0
    return v


cdef enum:
    TILE = 128


cdef void _gram_tile(const double* x, Py_ssize_t n, int d, Py_ssize_t i0, Py_ssize_t j0,
                     double* out) noexcept nogil:
    """out[i0:i0+TILE, j0:j0+TILE] = x[i0:] @ x[j0:].T via one dgemm call (row-major out, stride n)."""
    cdef char ta = b"T"
    cdef char tb = b"N"
    cdef int m = <int>(min(j0 + TILE, n) - j0)
    cdef int k = <int>(min(i0 + TILE, n) - i0)
    cdef int ld = d
    cdef int ldc = <int>n
    cdef double one = 1.0
    cdef double zero = 0.0
    # column-major view: C^T (m x k) = X[j0:]^T' * X[i0:]^T
    dgemm(&ta, &tb, &m, &k, &ld, &one, <double*>&x[j0 * d], &ld, <double*>&x[i0 * d], &ld,
          &zero, &out[i0 * n + j0], &ldc)


def pairwise_similarity(const double[:, ::1] x, int threads=1):
    """Upper triangle of ``x @ x.T`` mirrored, unit diagonal, clamped to [-1, 1].

    Work is split into a fixed grid of TILE x TILE blocks on or above the
    diagonal, each computed by a single dgemm call, so the value of every
    entry is independent of how tiles are assigned to threads.
    """
    cdef Py_ssize_t n = x.shape[0]
    cdef int d = <int>x.shape[1]
    cdef Py_ssize_t nt = (n + TILE - 1) // TILE
    cdef Py_ssize_t t, bi, bj, i, j
    cdef double v
    out_arr = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    if n == 0:
        return out_arr
    cdef const double* xp = &x[0, 0]
    cdef double* op = &out[0, 0]
    # enumerate upper-triangular tile pairs (bi <= bj) as t = 0 .. nt(nt+1)/2 - 1
    for t in prange(nt * (nt + 1) // 2, nogil=True, schedule="dynamic", num_threads=threads):
        bi = _tile_row(t, nt)
        bj = t - (bi * nt - bi * (bi - 1) // 2) + bi
        _gram_tile(xp, n, d, bi * TILE, bj * TILE, op)
    for i in prange(n, nogil=True, schedule="static", num_threads=threads):
        out[i, i] = 1.0
        for j in range(i + 1, n):
            v = _clamp(out[i, j])
            out[i, j] = v
            out[j, i] = v
    return out_arr


cdef inline Py_ssize_t _tile_row(Py_ssize_t t, Py_ssize_t nt) noexcept nogil:
    cdef Py_ssize_t bi = 0
    cdef Py_ssize_t start = 0
    while start + (nt - bi) <= t:
        start += nt - bi
        bi += 1
    return bi


def cross_similarity(const double[:, ::1] a, const double[:, ::1] b, int threads=1):
    """``a @ b.T`` clamped to [-1, 1]; rows of both inputs must be unit norm.

    One dgemm call per fixed block of TILE rows of ``a``.
    """
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = b.shape[0]
    cdef int d = <int>a.shape[1]
    cdef Py_ssize_t blk, i, j
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    if n == 0 or m == 0:
        return out_arr
    cdef const double* ap = &a[0, 0]
    cdef const double* bp = &b[0, 0]
    cdef double* op = &out[0, 0]
    for blk in prange((n + TILE - 1) // TILE, nogil=True, schedule="static", num_threads=threads):
        _cross_block(ap, bp, n, m, d, blk * TILE, op)
    for i in prange(n, nogil=True, schedule="static", num_threads=threads):
        for j in range(m):
            out[i, j] = _clamp(out[i, j])
    return out_arr


cdef void _cross_block(const double* a, const double* b, Py_ssize_t n, Py_ssize_t m, int d,
                       Py_ssize_t i0, double* out) noexcept nogil:
    cdef char ta = b"T"
    cdef char tb = b"N"
    cdef int mm = <int>m
    cdef int k = <int>(min(i0 + TILE, n) - i0)
    cdef int ld = d
    cdef int ldc = <int>m
    cdef double one = 1.0
    cdef double zero = 0.0
    dgemm(&ta, &tb, &mm, &k, &ld, &one, <double*>b, &ld, <double*>&a[i0 * d], &ld, &zero, &out[i0 * m], &ldc)


def upper_triangle(const double[:, ::1] s):
    """Strict upper triangle of a square matrix, row-major order."""
    cdef Py_ssize_t n = s.shape[0]
    cdef Py_ssize_t i, j, k = 0
    out_arr = np.empty(n * (n - 1) // 2, dtype=np.float64)
    cdef double[::1] out = out_arr
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                out[k] = s[i, j]
                k += 1
    return out_arr


def threshold_adjacency(const double[:, ::1] s, double eps, int threads=1):
    """CSR adjacency of ``s >= eps`` off the diagonal, plus every self-loop."""
    cdef Py_ssize_t n = s.shape[0]
    cdef Py_ssize_t i, j, pos
    cdef cnp.int64_t c
    indptr_arr = np.zeros(n + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] indptr = indptr_arr
    for i in prange(n, nogil=True, schedule="static", num_threads=threads):
        indptr[i + 1] = _row_count(s, i, eps)
    c = 0
    for i in range(n):
        c = c + indptr[i + 1]
        indptr[i + 1] = c
    indices_arr = np.empty(c, dtype=np.int64)
    cdef cnp.int64_t[::1] indices = indices_arr
    for i in prange(n, nogil=True, schedule="static", num_threads=threads):
        _row_fill(s, i, eps, indices, indptr[i])
    return indptr_arr, indices_arr


cdef inline cnp.int64_t _row_count(const double[:, ::1] s, Py_ssize_t i, double eps) noexcept nogil:
    cdef Py_ssize_t j
    cdef cnp.int64_t c = 0
    for j in range(s.shape[1]):
        if j == i or s[i, j] >= eps:
            c += 1
    return c


cdef inline void _row_fill(const double[:, ::1] s, Py_ssize_t i, double eps,
                           cnp.int64_t[::1] indices, cnp.int64_t start) noexcept nogil:
    cdef Py_ssize_t j
    cdef cnp.int64_t pos = start
    for j in range(s.shape[1]):
        if j == i or s[i, j] >= eps:
            indices[pos] = j
            pos += 1


cdef inline double _neighbor_sum(const double* prev, const cnp.int64_t* indptr,
                                 const cnp.int64_t* indices, Py_ssize_t i) noexcept nogil:
    cdef double acc = 0.0
    cdef cnp.int64_t jj
    for jj in range(indptr[i], indptr[i + 1]):
        acc = acc + prev[indices[jj]]
    return acc


def propagate(const double[::1] s0, const cnp.int64_t[::1] indptr,
              const cnp.int64_t[::1] indices, double alpha, Py_ssize_t iters,
              double tol=0.0, int threads=1):
    """Synchronous neighbourhood-mean updates; returns the (t+1, n) trace.

    Stops early after the first iteration whose max absolute change is
    below ``tol`` (``tol=0`` never stops early).
    """
    cdef Py_ssize_t n = s0.shape[0]
    cdef Py_ssize_t i, t, done = 0
    cdef double deg, delta
    trace_arr = np.empty((iters + 1, n), dtype=np.float64)
    cdef double[:, ::1] trace = trace_arr
    if n == 0:
        return trace_arr
    trace[0, :] = s0
    cdef const cnp.int64_t* ip = &indptr[0]
    cdef const cnp.int64_t* ix = &indices[0]
    cdef const double* init = &s0[0]
    cdef double* prev
    cdef double* cur
    for t in range(1, iters + 1):
        prev = &trace[t - 1, 0]
        cur = &trace[t, 0]
        for i in prange(n, nogil=True, schedule="static", num_threads=threads):
            deg = <double>(ip[i + 1] - ip[i])
            cur[i] = alpha * init[i] + ((1.0 - alpha) / deg) * _neighbor_sum(prev, ip, ix, i)
        done = t
        if tol > 0.0:
            delta = 0.0
            for i in range(n):
                if fabs(trace[t, i] - trace[t - 1, i]) > delta:
                    delta = fabs(trace[t, i] - trace[t - 1, i])
            if delta < tol:
                break
    return trace_arr[: done + 1]
