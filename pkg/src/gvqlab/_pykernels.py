"""Pure numpy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
Inputs are assumed to be C-contiguous float64 / int64 arrays; the dispatching
wrappers in :mod:`gvqlab.kernels` take care of the conversion.
"""

import numpy as np


def pairwise_sq_dist(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def csr_sum(x, indptr, indices):
    n = indptr.shape[0] - 1
    out = np.zeros((n, x.shape[1]))
    deg = np.diff(indptr)
    rows = np.repeat(np.arange(n), deg)
    np.add.at(out, rows, x[indices])
    return out


def csr_scatter(g, indptr, indices, n_src):
    """Transpose of :func:`csr_sum`: out[indices[p]] += g[row(p)]."""
    out = np.zeros((n_src, g.shape[1]))
    deg = np.diff(indptr)
    rows = np.repeat(np.arange(g.shape[0]), deg)
    np.add.at(out, indices, g[rows])
    return out


def csr_max(x, indptr, indices):
    n = indptr.shape[0] - 1
    d = x.shape[1]
    out = np.zeros((n, d))
    arg = np.full((n, d), -1, dtype=np.int64)
    for v in range(n):
        lo, hi = indptr[v], indptr[v + 1]
        if hi == lo:
            continue
        nb = indices[lo:hi]
        block = x[nb]
        k = np.argmax(block, axis=0)
        arg[v] = nb[k]
        out[v] = block[k, np.arange(d)]
    return out, arg


def max_scatter(g, arg, n_src):
    out = np.zeros((n_src, g.shape[1]))
    mask = arg >= 0
    cols = np.broadcast_to(np.arange(g.shape[1]), g.shape)
    np.add.at(out, (arg[mask], cols[mask]), g[mask])
    return out


def pair_dist(x, i, j):
    diff = x[i] - x[j]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def coassign_scan(h, assign, radius):
    """Counts over unordered pairs: (close, close-but-split, co-assigned)."""
    n = h.shape[0]
    d2 = pairwise_sq_dist(h, h)
    iu = np.triu_indices(n, k=1)
    close = d2[iu] <= radius * radius
    same = assign[iu[0]] == assign[iu[1]]
    return int(close.sum()), int((close & ~same).sum()), int(same.sum())


def jacobi_eigvalsh(a, tol=1e-12, max_sweeps=100):
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    if n == 1:
        return a.diagonal().copy()
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
    return np.sort(a.diagonal())[::-1].copy()
