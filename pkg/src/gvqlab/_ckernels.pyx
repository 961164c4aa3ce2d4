# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels``.

Signatures and return conventions are identical; reductions run in
sequential row-major order so results are reproducible run to run.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()


def pairwise_sq_dist(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], d = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, t
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    t = a[i, k] - b[j, k]
                    acc = acc + t * t
                o[i, j] = acc
    return out


def csr_sum(const double[:, ::1] x, const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices):
    cdef Py_ssize_t n = indptr.shape[0] - 1, d = x.shape[1]
    cdef Py_ssize_t v, p, k, u
    out = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for v in range(n):
            for p in range(indptr[v], indptr[v + 1]):
                u = indices[p]
                for k in range(d):
                    o[v, k] += x[u, k]
    return out


def csr_scatter(const double[:, ::1] g, const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
                Py_ssize_t n_src):
    cdef Py_ssize_t n = indptr.shape[0] - 1, d = g.shape[1]
    cdef Py_ssize_t v, p, k, u
    out = np.zeros((n_src, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for v in range(n):
            for p in range(indptr[v], indptr[v + 1]):
                u = indices[p]
                for k in range(d):
                    o[u, k] += g[v, k]
    return out


def csr_max(const double[:, ::1] x, const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices):
    cdef Py_ssize_t n = indptr.shape[0] - 1, d = x.shape[1]
    cdef Py_ssize_t v, p, k, u
    out = np.zeros((n, d), dtype=np.float64)
    arg = np.full((n, d), -1, dtype=np.int64)
    cdef double[:, ::1] o = out
    cdef cnp.int64_t[:, ::1] a = arg
    with nogil:
        for v in range(n):
            for p in range(indptr[v], indptr[v + 1]):
                u = indices[p]
                for k in range(d):
                    # strict > keeps the first maximiser, matching np.argmax
                    if a[v, k] < 0 or x[u, k] > o[v, k]:
                        o[v, k] = x[u, k]
                        a[v, k] = u
    return out, arg


def max_scatter(const double[:, ::1] g, const cnp.int64_t[:, ::1] arg, Py_ssize_t n_src):
    cdef Py_ssize_t n = g.shape[0], d = g.shape[1]
    cdef Py_ssize_t v, k
    cdef cnp.int64_t u
    out = np.zeros((n_src, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for v in range(n):
            for k in range(d):
                u = arg[v, k]
                if u >= 0:
                    o[u, k] += g[v, k]
    return out


def pair_dist(const double[:, ::1] x, const cnp.int64_t[::1] i, const cnp.int64_t[::1] j):
    cdef Py_ssize_t m = i.shape[0], d = x.shape[1]
    cdef Py_ssize_t p, k
    cdef double acc, t
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for p in range(m):
            acc = 0.0
            for k in range(d):
                t = x[i[p], k] - x[j[p], k]
                acc = acc + t * t
            o[p] = sqrt(acc)
    return out


def coassign_scan(const double[:, ::1] h, const cnp.int64_t[::1] assign, double radius):
    cdef Py_ssize_t n = h.shape[0], d = h.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, t, r2 = radius * radius
    cdef long close = 0, split = 0, same = 0
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                if assign[i] == assign[j]:
                    same += 1
                acc = 0.0
                for k in range(d):
                    t = h[i, k] - h[j, k]
                    acc = acc + t * t
                if acc <= r2:
                    close += 1
                    if assign[i] != assign[j]:
                        split += 1
    return int(close), int(split), int(same)


def jacobi_eigvalsh(a_in, double tol=1e-12, int max_sweeps=100):
    a_np = np.array(a_in, dtype=np.float64, copy=True, order="C")
    cdef double[:, ::1] a = a_np
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t p, q, r, sweep
    cdef double apq, theta, t, c, s, x, y, off, scale = 0.0
    for p in range(n):
        for q in range(n):
            if fabs(a[p, q]) > scale:
                scale = fabs(a[p, q])
    if scale < 1e-300:
        scale = 1e-300
    with nogil:
        for sweep in range(max_sweeps):
            off = 0.0
            for p in range(n):
                for q in range(p):
                    off = off + a[p, q] * a[p, q]
            if sqrt(off) <= tol * scale:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = a[p, q]
                    if fabs(apq) <= 1e-300:
                        continue
                    theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                    if theta == 0.0:
                        t = 1.0
                    elif theta > 0.0:
                        t = 1.0 / (theta + sqrt(theta * theta + 1.0))
                    else:
                        t = -1.0 / (-theta + sqrt(theta * theta + 1.0))
                    c = 1.0 / sqrt(t * t + 1.0)
                    s = t * c
                    for r in range(n):
                        x = a[r, p]
                        y = a[r, q]
                        a[r, p] = c * x - s * y
                        a[r, q] = s * x + c * y
                    for r in range(n):
                        x = a[p, r]
                        y = a[q, r]
                        a[p, r] = c * x - s * y
                        a[q, r] = s * x + c * y
    return np.sort(np.diagonal(a_np))[::-1].copy()
