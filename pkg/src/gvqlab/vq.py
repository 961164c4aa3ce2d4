"""Deterministic vector quantization: codebook, assignment, STE and VQ losses."""

import warnings
from dataclasses import dataclass

import numpy as np

from gvqlab import kernels
from gvqlab import tensor as T
from gvqlab.encoder import decode


@dataclass
class Codebook:
    """K x d codewords. ``entries`` may be a leaf or a derived tensor (SimVQ)."""

    entries: T.Tensor
    similarity: str = "euclidean"
    ortho_weight: float = 0.0

    def __post_init__(self):
        if self.similarity not in ("euclidean", "cosine"):
            raise ValueError(f"unknown similarity {self.similarity!r}")
        if self.entries.rows < 1:
            raise ValueError("codebook needs at least one codeword")

    @property
    def K(self):
        return self.entries.rows

    @property
    def dim(self):
        return self.entries.cols


@dataclass(frozen=True)
class Assignment:
    index: np.ndarray
    K: int

    def __post_init__(self):
        if self.index.size and (self.index.min() < 0 or self.index.max() >= self.K):
            raise ValueError("assignment index out of range")

    def counts(self):
        return np.bincount(self.index, minlength=self.K)

    def one_hot(self):
        out = np.zeros((self.index.shape[0], self.K))
        out[np.arange(self.index.shape[0]), self.index] = 1.0
        return out


def _data(x):
    return x.data if isinstance(x, T.Tensor) else np.asarray(x, dtype=np.float64)


def nearest_assign(h, cb):
    """Index of the closest codeword per row; ties go to the lowest index."""
    if cb.K < 1:
        raise ValueError("empty codebook")
    hv, cv = _data(h), cb.entries.data
    if hv.shape[1] != cv.shape[1]:
        raise T.DimensionError(f"embeddings have dim {hv.shape[1]}, codebook {cv.shape[1]}")
    if cb.similarity == "cosine":
        sim = kernels_normalize(hv) @ kernels_normalize(cv).T
        idx = np.argmax(sim, axis=1)
    else:
        idx = np.argmin(kernels.pairwise_sq_dist(hv, cv), axis=1)
    return Assignment(idx.astype(np.int64), cb.K)


def kernels_normalize(x):
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norm, 1e-12)


def ste_quantize(h, cb, a):
    """Straight-through quantization ``z = sg(C[a] - h) + h``.

    The forward value is the gathered codeword rows, bit for bit; the
    backward pass hands the incoming gradient to ``h`` unchanged and gives
    the codebook nothing.
    """
    if h.rows != a.index.shape[0] or h.cols != cb.dim:
        raise T.DimensionError(f"ste_quantize: h {h.shape}, codebook {cb.entries.shape}, {a.index.shape[0]} indices")
    value = cb.entries.data[a.index]
    return T._make(value, "ste", (h, cb.entries), lambda g: (g, np.zeros_like(cb.entries.data)))


def gather_codewords(cb, a):
    """C[a] with gradient flowing to the codebook (the codebook-loss path)."""
    return T.gather_rows(cb.entries, a.index)


def vq_aux_losses(h, z, beta=1.0, reduction="sum"):
    """(codebook loss, commitment loss) = (|sg[h] - z|^2, beta |h - sg[z]|^2).

    ``z`` must be the gathered codewords (see :func:`gather_codewords`), not
    the STE output, or the codebook term has no path to the codebook.
    ``reduction="sum"`` keeps the unreduced norms; ``"mean"`` divides by the
    number of rows.
    """
    if h.shape != z.shape:
        raise T.DimensionError(f"vq_aux_losses: {h.shape} vs {z.shape}")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    d1 = T.sub(T.stop_gradient(h), z)
    d2 = T.sub(h, T.stop_gradient(z))
    cb_loss = T.sum(T.mul(d1, d1))
    commit = T.sum(T.mul(d2, d2))
    if reduction == "mean":
        cb_loss = T.scale(cb_loss, 1.0 / h.rows)
        commit = T.scale(commit, 1.0 / h.rows)
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return cb_loss, T.scale(commit, beta)


# ----------------------------------------------------------------------------
# reconstruction

DENSE_LINK_MAX_NODES = 512


def sample_link_pairs(g, neg_samples, rng):
    """All edges (target 1) plus ``neg_samples`` random non-edges per edge (target 0)."""
    if neg_samples < 1:
        raise T.ParameterError(f"neg_samples must be >= 1, got {neg_samples}")
    pos = g.edge_array()
    n = g.n
    want = neg_samples * max(pos.shape[0], 1)
    max_pairs = n * (n - 1) // 2
    if max_pairs - pos.shape[0] <= 0:
        neg = np.zeros((0, 2), dtype=np.int64)
    else:
        edge_keys = set((pos[:, 0] * n + pos[:, 1]).tolist())
        got = []
        total = 0
        for _ in range(100):
            u = rng.integers(0, n, size=2 * want)
            v = rng.integers(0, n, size=2 * want)
            lo, hi = np.minimum(u, v), np.maximum(u, v)
            ok = lo != hi
            keys = lo * n + hi
            ok &= np.fromiter((k not in edge_keys for k in keys.tolist()), dtype=bool, count=keys.shape[0])
            cand = np.stack([lo[ok], hi[ok]], axis=1)
            got.append(cand)
            total += cand.shape[0]
            if total >= want:
                break
        neg = np.concatenate(got)[:want]
    u = np.concatenate([pos[:, 0], neg[:, 0]]).astype(np.int64)
    v = np.concatenate([pos[:, 1], neg[:, 1]]).astype(np.int64)
    target = np.concatenate([np.ones(pos.shape[0]), np.zeros(neg.shape[0])])
    return u, v, target


def all_link_pairs(g):
    iu, ju = np.triu_indices(g.n, k=1)
    target = g.dense_adjacency()[iu, ju]
    return iu.astype(np.int64), ju.astype(np.int64), target


def link_loss_from_pairs(z, u, v, target):
    logits = T.rowdot(T.gather_rows(z, u), T.gather_rows(z, v))
    diff = T.sub(T.Tensor(target[:, None]), T.sigmoid(logits))
    return T.mean(T.mul(diff, diff))


def dense_link_loss(g, z):
    """Mean over unordered node pairs of (a_uv - sigmoid(z_u . z_v))^2."""
    if g.n > DENSE_LINK_MAX_NODES:
        raise ValueError(f"dense link loss limited to {DENSE_LINK_MAX_NODES} nodes, graph has {g.n}")
    n = g.n
    mask = np.triu(np.ones((n, n)), k=1)
    s = T.sigmoid(T.matmul(z, T.transpose(z)))
    diff = T.sub(T.Tensor(g.dense_adjacency()), s)
    sq = T.mul(T.mul(diff, diff), T.Tensor(mask))
    return T.scale(T.sum(sq), 1.0 / mask.sum())


def feature_loss(g, z, dec):
    diff = T.sub(decode(z, dec), T.Tensor(g.features))
    return T.scale(T.sum(T.mul(diff, diff)), 1.0 / g.n)


def recon_losses(g, z, dec, neg_samples=5, rng=None, pairs=None, dense=False):
    """(feature loss, link loss) for quantized embeddings ``z``.

    The link term uses sampled pairs by default: every edge plus
    ``neg_samples`` random non-edges per edge. ``pairs=(u, v, target)``
    overrides the sample; ``dense=True`` scores every pair (n <= 512).
    """
    if z.rows != g.n:
        raise T.DimensionError(f"z has {z.rows} rows for a graph with {g.n} nodes")
    feat = feature_loss(g, z, dec)
    if dense:
        return feat, dense_link_loss(g, z)
    if pairs is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        pairs = sample_link_pairs(g, neg_samples, rng)
    u, v, target = pairs
    if u.shape[0] == 0:
        return feat, T.Tensor([[0.0]])
    return feat, link_loss_from_pairs(z, u, v, target)


# ----------------------------------------------------------------------------
# utilization

def usage_distribution(x, K=None):
    if isinstance(x, Assignment):
        counts = x.counts().astype(np.float64)
    else:
        arr = np.asarray(x.data if isinstance(x, T.Tensor) else x)
        if arr.size == 0:
            raise ValueError("perplexity of an empty input")
        if arr.ndim == 2:
            counts = arr.astype(np.float64).sum(axis=0)
        elif np.issubdtype(arr.dtype, np.integer):
            counts = np.bincount(arr, minlength=K or 0).astype(np.float64)
        else:
            counts = arr.astype(np.float64)
    total = counts.sum()
    if counts.size == 0 or total <= 0:
        raise ValueError("perplexity of an empty input")
    if np.any(counts < 0):
        raise ValueError("usage counts must be non-negative")
    return counts / total


def perplexity(x, K=None):
    """exp(Shannon entropy) of code usage, with 0 log 0 = 0.

    ``x`` is an :class:`Assignment`, an integer index array, a count or
    probability vector, or an n x K matrix of per-row distributions.
    """
    p = usage_distribution(x, K)
    nz = p[p > 0]
    return float(np.exp(-np.sum(nz * np.log(nz))))


def active_codes(a):
    return int(np.count_nonzero(a.counts()))


# ----------------------------------------------------------------------------
# initialisation and regularisation

def kmeans(x, K, iters=20, seed=0):
    """k-means++ seeding then Lloyd iterations.

    Returns ``(centroids, labels, inertia_history)``. Empty clusters are
    re-seeded from the point farthest from its centroid.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < K:
        raise ValueError(f"k-means needs n >= K, got n={n}, K={K}")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    d2 = kernels.pairwise_sq_dist(x, x[chosen]).min(axis=1)
    for _ in range(1, K):
        d2[chosen] = 0.0
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            free = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(free))
        chosen.append(nxt)
        d2 = np.minimum(d2, kernels.pairwise_sq_dist(x, x[[nxt]])[:, 0])
    centroids = x[chosen].copy()
    history = []
    labels = None
    for _ in range(max(iters, 1)):
        dist = kernels.pairwise_sq_dist(x, centroids)
        labels = np.argmin(dist, axis=1)
        point_d = dist[np.arange(n), labels]
        history.append(float(point_d.sum()))
        counts = np.bincount(labels, minlength=K)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, x)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        taken = np.zeros(n, dtype=bool)
        for k in np.flatnonzero(~nonempty):
            cand = np.where(taken, -1.0, point_d)
            far = int(np.argmax(cand))
            taken[far] = True
            centroids[k] = x[far]
            point_d[far] = 0.0
    dist = kernels.pairwise_sq_dist(x, centroids)
    labels = np.argmin(dist, axis=1)
    history.append(float(dist[np.arange(n), labels].sum()))
    return centroids, labels, history


def kmeans_init(h, K, iters=20, seed=0, similarity="euclidean", ortho_weight=0.0):
    x = _data(h)
    if similarity == "cosine":
        x = kernels_normalize(x)
    centroids, _, _ = kmeans(x, K, iters=iters, seed=seed)
    return Codebook(T.Tensor(centroids, requires_grad=True), similarity=similarity, ortho_weight=ortho_weight)


def random_init(K, d, seed=0, scale=1.0, similarity="euclidean", ortho_weight=0.0):
    rng = np.random.default_rng(seed)
    return Codebook(T.Tensor(scale * rng.standard_normal((K, d)), requires_grad=True),
                    similarity=similarity, ortho_weight=ortho_weight)


def ortho_penalty(cb):
    """||C_hat C_hat^T - I||_F^2 over row-normalised codewords.

    A zero codeword counts as orthogonal to everything, itself included, and
    triggers a RuntimeWarning.
    """
    c = cb.entries
    norms = np.linalg.norm(c.data, axis=1)
    target = np.diag((norms > 0).astype(np.float64))
    if np.any(norms == 0):
        warnings.warn("ortho_penalty: zero-norm codeword", RuntimeWarning, stacklevel=2)
    u = T.row_normalize(c)
    diff = T.sub(T.matmul(u, T.transpose(u)), T.Tensor(target))
    return T.sum(T.mul(diff, diff))
