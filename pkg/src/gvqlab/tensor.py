"""Dense 2-D tensors with tape-based reverse-mode differentiation.

Every op returns a new :class:`Tensor` holding its forward value and, when
any input requires a gradient, a :class:`TapeNode` recording the parents and
the backward rule. :func:`backward` walks the tape once in reverse
topological order.

Gradients accumulate: calling ``backward`` twice without :func:`zero_grad`
adds the second gradient on top of the first, for leaves and intermediates
alike.

All values are float64. Broadcasting is limited to scalar ``scale`` and the
explicit row-vector ops ``add_row`` / ``mul_row``.
"""

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from gvqlab import kernels


class DimensionError(ValueError):
    """Operand shapes do not chain."""


class DomainError(ValueError):
    """Input outside the domain of an op (e.g. log of a non-positive value)."""


class ParameterError(ValueError):
    """Invalid scalar parameter (e.g. non-positive temperature)."""


@dataclass
class TapeNode:
    op: str
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence]
    saved: dict = field(default_factory=dict)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad=False, name=None, _node=None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got {arr.ndim}-D input")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node = _node
        self.name = name

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.shape != (1, 1):
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(other, self)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("only division by a scalar is supported")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        raise TypeError("scalar broadcasting is only supported through scale()")
    return Tensor(arr)


def _make(value, op, inputs, backward, **saved):
    needs = any(t.requires_grad for t in inputs)
    node = TapeNode(op, tuple(inputs), backward, saved) if needs else None
    return Tensor(value, requires_grad=needs, _node=node)


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ----------------------------------------------------------------------------
# arithmetic

def matmul(a, b):
    if a.cols != b.rows:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.data, b.data
    return _make(av @ bv, "matmul", (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a, b):
    _same_shape(a, b, "add")
    return _make(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a, b):
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def mul(a, b):
    _same_shape(a, b, "mul")
    av, bv = a.data, b.data
    return _make(av * bv, "mul", (a, b), lambda g: (g * bv, g * av))


def elementwise(a, b, kind):
    try:
        fn = {"add": add, "sub": sub, "mul": mul}[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(a, b)


def scale(a, s):
    s = float(s)
    return _make(a.data * s, "scale", (a,), lambda g: (g * s,))


def add_row(a, r):
    """a + r with the 1 x cols row vector r added to every row (bias)."""
    if r.rows != 1 or r.cols != a.cols:
        raise DimensionError(f"add_row: need 1x{a.cols} row, got {r.shape}")
    return _make(a.data + r.data, "add_row", (a, r), lambda g: (g, g.sum(axis=0, keepdims=True)))


def mul_row(a, r):
    """a * r with the 1 x cols row vector r scaling every row."""
    if r.rows != 1 or r.cols != a.cols:
        raise DimensionError(f"mul_row: need 1x{a.cols} row, got {r.shape}")
    av, rv = a.data, r.data
    return _make(av * rv, "mul_row", (a, r), lambda g: (g * rv, (g * av).sum(axis=0, keepdims=True)))


def mul_col(a, c):
    """a * c with the rows x 1 column vector c scaling each row."""
    if c.cols != 1 or c.rows != a.rows:
        raise DimensionError(f"mul_col: need {a.rows}x1 column, got {c.shape}")
    av, cv = a.data, c.data
    return _make(av * cv, "mul_col", (a, c), lambda g: (g * cv, (g * av).sum(axis=1, keepdims=True)))


def transpose(a):
    return _make(a.data.T.copy(), "transpose", (a,), lambda g: (g.T,))


# ----------------------------------------------------------------------------
# nonlinearities

def relu(a):
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), "relu", (a,), lambda g: (g * mask,))


def elu(a):
    x = a.data
    neg = np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg)
    slope = np.where(x > 0, 1.0, neg + 1.0)
    return _make(out, "elu", (a,), lambda g: (g * slope,))


def sigmoid(a):
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def exp(a):
    out = np.exp(a.data)
    return _make(out, "exp", (a,), lambda g: (g * out,))


def log(a):
    x = a.data
    if np.any(x <= 0):
        raise DomainError("log: input has non-positive entries")
    return _make(np.log(x), "log", (a,), lambda g: (g / x,))


def identity(a):
    return a


_ACTIVATIONS = {"relu": relu, "elu": elu, "sigmoid": sigmoid, "exp": exp, "log": log, "identity": identity}


def activation(a, kind):
    try:
        return _ACTIVATIONS[kind](a)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


# ----------------------------------------------------------------------------
# row-wise normalisations

def softmax_rows(a, temperature=1.0):
    if not temperature > 0:
        raise ParameterError(f"softmax temperature must be > 0, got {temperature}")
    x = a.data / temperature
    x = x - x.max(axis=1, keepdims=True)
    e = np.exp(x)
    p = e / e.sum(axis=1, keepdims=True)

    def back(g):
        inner = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - inner) / temperature,)

    return _make(p, "softmax_rows", (a,), back, temperature=temperature)


def log_softmax_rows(a):
    x = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=1, keepdims=True))
    out = x - lse
    p = np.exp(out)
    return _make(out, "log_softmax_rows", (a,), lambda g: (g - p * g.sum(axis=1, keepdims=True),))


def row_normalize(a, eps=1e-12):
    """Rows scaled to unit L2 norm; all-zero rows stay zero."""
    x = a.data
    norm = np.sqrt((x * x).sum(axis=1, keepdims=True))
    safe = np.maximum(norm, eps)
    u = x / safe

    def back(g):
        proj = (g * u).sum(axis=1, keepdims=True)
        gx = (g - u * proj) / safe
        return (np.where(norm > eps, gx, g / safe),)

    return _make(u, "row_normalize", (a,), back)


# ----------------------------------------------------------------------------
# reductions

def sum(a):  # noqa: A001 - mirrors the numpy name
    shape = a.shape
    return _make(np.array([[a.data.sum()]]), "sum", (a,), lambda g: (np.full(shape, g[0, 0]),))


def mean(a):
    size = a.data.size
    shape = a.shape
    return _make(np.array([[a.data.mean()]]), "mean", (a,), lambda g: (np.full(shape, g[0, 0] / size),))


def sum_rows(a):
    """rows x 1 column of per-row sums."""
    cols = a.cols
    return _make(a.data.sum(axis=1, keepdims=True), "sum_rows", (a,), lambda g: (np.repeat(g, cols, axis=1),))


def rowdot(a, b):
    """rows x 1 column of per-row inner products."""
    _same_shape(a, b, "rowdot")
    av, bv = a.data, b.data
    out = np.einsum("ij,ij->i", av, bv)[:, None]
    return _make(out, "rowdot", (a, b), lambda g: (g * bv, g * av))


def pairwise_sq_dist(a, b):
    """result[i, j] = sum_k (a[i, k] - b[j, k])**2."""
    if a.cols != b.cols:
        raise DimensionError(f"pairwise_sq_dist: feature dims differ, {a.shape} vs {b.shape}")
    av, bv = a.data, b.data
    out = kernels.pairwise_sq_dist(av, bv)

    def back(g):
        ga = 2.0 * (av * g.sum(axis=1, keepdims=True) - g @ bv)
        gb = 2.0 * (bv * g.sum(axis=0)[:, None] - g.T @ av)
        return ga, gb

    return _make(out, "pairwise_sq_dist", (a, b), back)


def stop_gradient(a):
    """Forward identity; contributes no gradient to ``a``."""
    return _make(a.data.copy(), "stop_gradient", (a,), lambda g: (np.zeros_like(g),))


# ----------------------------------------------------------------------------
# indexing and graph ops

def gather_rows(a, index):
    index = np.asarray(index, dtype=np.int64)
    n = a.rows

    def back(g):
        out = np.zeros((n, g.shape[1]))
        np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], "gather_rows", (a,), back)


def segment_logsumexp(values, segments, n_segments):
    """Per-segment log-sum-exp of a column of values.

    ``segments[i]`` names the segment of ``values[i]``; every segment in
    ``range(n_segments)`` must be non-empty.
    """
    if values.cols != 1:
        raise DimensionError(f"segment_logsumexp: need a column, got {values.shape}")
    seg = np.asarray(segments, dtype=np.int64)
    v = values.data[:, 0]
    counts = np.bincount(seg, minlength=n_segments)
    if np.any(counts == 0):
        raise ValueError("segment_logsumexp: empty segment")
    mx = np.full(n_segments, -np.inf)
    np.maximum.at(mx, seg, v)
    e = np.exp(v - mx[seg])
    tot = np.zeros(n_segments)
    np.add.at(tot, seg, e)
    out = (mx + np.log(tot))[:, None]
    w = e / tot[seg]
    return _make(out, "segment_logsumexp", (values,), lambda g: ((g[seg, 0] * w)[:, None],))


def csr_aggregate(a, indptr, indices, kind="mean"):
    """Aggregate rows of ``a`` over CSR neighbour lists; empty lists give zeros."""
    indptr = np.asarray(indptr, dtype=np.int64)
    indices = np.asarray(indices, dtype=np.int64)
    n_src = a.rows
    if kind == "sum":
        out = kernels.csr_sum(a.data, indptr, indices)
        return _make(out, "csr_sum", (a,), lambda g: (kernels.csr_scatter(g, indptr, indices, n_src),))
    if kind == "mean":
        deg = np.diff(indptr).astype(np.float64)[:, None]
        inv = np.where(deg > 0, 1.0 / np.maximum(deg, 1.0), 0.0)
        out = kernels.csr_sum(a.data, indptr, indices) * inv
        return _make(out, "csr_mean", (a,), lambda g: (kernels.csr_scatter(g * inv, indptr, indices, n_src),))
    if kind == "max":
        out, arg = kernels.csr_max(a.data, indptr, indices)
        return _make(out, "csr_max", (a,), lambda g: (kernels.max_scatter(g, arg, n_src),))
    raise ValueError(f"unknown aggregator {kind!r}")


# ----------------------------------------------------------------------------
# backward pass

def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for parent in t.node.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss):
    """Populate ``.grad`` on every requires_grad tensor reachable from ``loss``."""
    if loss.shape != (1, 1):
        raise ValueError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is not connected to any tensor that requires a gradient")
    order = _topo_order(loss)
    pending = {id(loss): np.ones((1, 1))}
    for t in reversed(order):
        g = pending.pop(id(t), None)
        if g is None:
            continue
        t.grad = g.copy() if t.grad is None else t.grad + g
        if t.node is None:
            continue
        for parent, pg in zip(t.node.inputs, t.node.backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


def finite_diff_check(f, x, h=1e-5, floor=1e-12):
    """Max relative error between the tape gradient and central differences.

    ``f`` maps a Tensor to a 1 x 1 Tensor. The error per entry is
    ``|analytic - numeric| / max(|analytic| + |numeric|, floor)``; raise
    ``floor`` to stop round-off on near-zero entries from dominating. The
    default step sits near the cube root of float64 epsilon, which balances
    truncation against cancellation error for central differences.
    """
    probe = Tensor(np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64), requires_grad=True)
    base = probe.data.copy()
    backward(f(probe))
    analytic = probe.grad
    numeric = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        plus = base.copy()
        plus[idx] += h
        minus = base.copy()
        minus[idx] -= h
        numeric[idx] = (f(Tensor(plus)).item() - f(Tensor(minus)).item()) / (2.0 * h)
    err = np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(err.max())
