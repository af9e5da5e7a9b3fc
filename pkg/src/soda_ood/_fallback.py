"""Pure numpy/scipy versions of the kernels in ``_kernels.pyx``.

Same signatures and contracts; ``threads`` is accepted and ignored (BLAS
decides its own threading).
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def pairwise_similarity(x, threads=1):
    n = x.shape[0]
    upper = np.triu(x @ x.T, 1)
    out = upper + upper.T
    out[np.diag_indices(n)] = 1.0
    np.clip(out, -1.0, 1.0, out=out)
    return out


def cross_similarity(a, b, threads=1):
    out = a @ b.T
    np.clip(out, -1.0, 1.0, out=out)
    return np.ascontiguousarray(out)


def upper_triangle(s):
    return s[np.triu_indices(s.shape[0], 1)]


def threshold_adjacency(s, eps, threads=1):
    mask = s >= eps
    np.fill_diagonal(mask, True)
    indptr = np.zeros(s.shape[0] + 1, dtype=np.int64)
    np.cumsum(mask.sum(axis=1), out=indptr[1:])
    indices = np.nonzero(mask)[1].astype(np.int64)
    return indptr, indices


def propagate(s0, indptr, indices, alpha, iters, tol=0.0, threads=1):
    n = s0.shape[0]
    adj = sp.csr_matrix((np.ones(indices.shape[0]), indices, indptr), shape=(n, n))
    coef = (1.0 - alpha) / np.diff(indptr).astype(np.float64)
    trace = np.empty((iters + 1, n), dtype=np.float64)
    trace[0] = s0
    done = 0
    for t in range(1, iters + 1):
        trace[t] = alpha * s0 + coef * (adj @ trace[t - 1])
        done = t
        if tol > 0.0 and np.max(np.abs(trace[t] - trace[t - 1]), initial=0.0) < tol:
            break
    return trace[: done + 1]
