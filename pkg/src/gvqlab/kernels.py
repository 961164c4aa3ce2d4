"""Kernel dispatch: compiled Cython core when built, numpy fallback otherwise.

Set ``GVQLAB_BACKEND=python`` to force the fallback (used by the test suite
and the benchmark to compare both paths).
"""

import os

import numpy as np

from gvqlab import _pykernels

_c = None
if os.environ.get("GVQLAB_BACKEND", "").lower() != "python":
    try:
        from gvqlab import _ckernels as _c
    except ImportError:  # extension not built
        _c = None

BACKEND = "cython" if _c is not None else "python"
_impl = _c if _c is not None else _pykernels

# above this size the O(f^3)-per-sweep Jacobi loop is replaced by LAPACK
JACOBI_MAX_DIM = 128


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def available_backends():
    return ["python", "cython"] if _c is not None else ["python"]


def get_impl(name=None):
    """Return the kernel module for ``name`` (``None`` means the active one)."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        if _c is None:
            raise RuntimeError("Cython kernels are not built")
        return _c
    raise ValueError(f"unknown kernel backend {name!r}")


def pairwise_sq_dist(a, b, impl=None):
    return get_impl(impl).pairwise_sq_dist(_f64(a), _f64(b))


def csr_sum(x, indptr, indices, impl=None):
    return get_impl(impl).csr_sum(_f64(x), _i64(indptr), _i64(indices))


def csr_scatter(g, indptr, indices, n_src, impl=None):
    return get_impl(impl).csr_scatter(_f64(g), _i64(indptr), _i64(indices), int(n_src))


def csr_max(x, indptr, indices, impl=None):
    return get_impl(impl).csr_max(_f64(x), _i64(indptr), _i64(indices))


def max_scatter(g, arg, n_src, impl=None):
    return get_impl(impl).max_scatter(_f64(g), _i64(arg), int(n_src))


def pair_dist(x, i, j, impl=None):
    return get_impl(impl).pair_dist(_f64(x), _i64(i), _i64(j))


def coassign_scan(h, assign, radius, impl=None):
    return get_impl(impl).coassign_scan(_f64(h), _i64(assign), float(radius))


def eigvalsh_desc(a, impl=None):
    """Eigenvalues of a symmetric matrix, largest first."""
    a = _f64(a)
    if a.shape[0] > JACOBI_MAX_DIM:
        return np.linalg.eigvalsh(a)[::-1].copy()
    return get_impl(impl).jacobi_eigvalsh(a)
