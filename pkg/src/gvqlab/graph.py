"""Undirected attributed graphs: storage, file loading, SBM synthesis, statistics."""

import hashlib
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from gvqlab import kernels


class FormatError(ValueError):
    """Malformed graph input file."""


@dataclass(frozen=True)
class Graph:
    """Undirected graph with symmetric, deduplicated CSR neighbour lists.

    Self-loops are never stored; the encoder adds the self path itself.
    ``features`` is an ``n x f`` float64 array.
    """

    features: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    labels: Optional[np.ndarray] = None

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def num_features(self):
        return self.features.shape[1]

    @property
    def num_edges(self):
        return int(self.indices.shape[0] // 2)

    def degrees(self):
        return np.diff(self.indptr)

    def neighbors(self, v):
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def edge_array(self):
        """Unique undirected edges as an (|E|, 2) array with u < v."""
        rows = np.repeat(np.arange(self.n), self.degrees())
        keep = rows < self.indices
        return np.stack([rows[keep], self.indices[keep]], axis=1)

    def has_edge(self, u, v):
        nb = self.neighbors(u)
        k = np.searchsorted(nb, v)
        return bool(k < nb.shape[0] and nb[k] == v)

    def dense_adjacency(self):
        a = np.zeros((self.n, self.n))
        rows = np.repeat(np.arange(self.n), self.degrees())
        a[rows, self.indices] = 1.0
        return a

    def fingerprint(self):
        """Stable content hash, used to key cached contrastive sets."""
        h = hashlib.sha256()
        for arr in (self.features, self.indptr, self.indices):
            h.update(np.ascontiguousarray(arr).tobytes())
            h.update(str(arr.shape).encode())
        return h.hexdigest()[:16]


def l2_normalize_rows(x):
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    return np.where(norm > 0, x / np.where(norm > 0, norm, 1.0), x)


def from_edges(features, edges, labels=None, normalize=True):
    """Build a :class:`Graph`, symmetrising and deduplicating ``edges``."""
    features = np.array(features, dtype=np.float64, ndmin=2)
    n = features.shape[0]
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise FormatError(f"edge endpoint outside [0, {n})")
    edges = edges[edges[:, 0] != edges[:, 1]]
    both = np.concatenate([edges, edges[:, ::-1]])
    both = np.unique(both, axis=0) if both.size else both.reshape(0, 2)
    order = np.lexsort((both[:, 1], both[:, 0]))
    both = both[order]
    counts = np.bincount(both[:, 0], minlength=n) if both.size else np.zeros(n, dtype=np.int64)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    if normalize:
        features = l2_normalize_rows(features)
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
    return Graph(features, indptr, both[:, 1].astype(np.int64).copy(), labels)


def _read_edges(path):
    edges = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'u v', got {raw.strip()!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-integer node id in {raw.strip()!r}") from None
            if u < 0 or v < 0:
                raise FormatError(f"{path}:{lineno}: negative node id")
            edges.append((u, v, lineno))
    return edges


def _read_features(path):
    rows = []
    width = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                vals = [float(tok) for tok in line.split(",")]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric feature value") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise FormatError(f"{path}:{lineno}: ragged row ({len(vals)} values, expected {width})")
            rows.append(vals)
    if not rows:
        raise FormatError(f"{path}: no feature rows")
    return np.array(rows, dtype=np.float64)


def load_graph(edges_path, features_path, labels_path=None, normalize=True):
    """Load an edge list ("u v" per line, 0-indexed) plus a CSV feature matrix.

    Directed inputs are symmetrised. Node ids must be below the number of
    feature rows. Features are L2-row-normalised unless ``normalize=False``.
    """
    features = _read_features(features_path)
    n = features.shape[0]
    raw = _read_edges(edges_path)
    for u, v, lineno in raw:
        if u >= n or v >= n:
            raise FormatError(f"{edges_path}:{lineno}: node id {max(u, v)} out of range for {n} feature rows")
    labels = None
    if labels_path is not None:
        labels = []
        with open(labels_path) as fh:
            for lineno, raw_line in enumerate(fh, start=1):
                tok = raw_line.strip()
                if not tok:
                    continue
                try:
                    labels.append(int(tok))
                except ValueError:
                    raise FormatError(f"{labels_path}:{lineno}: non-integer label") from None
        if len(labels) != n:
            raise FormatError(f"{labels_path}: {len(labels)} labels for {n} nodes")
    edges = np.array([(u, v) for u, v, _ in raw], dtype=np.int64).reshape(-1, 2)
    return from_edges(features, edges, labels, normalize=normalize)


def save_graph(g, edges_path, features_path, labels_path=None):
    edges_path, features_path = Path(edges_path), Path(features_path)
    with open(edges_path, "w") as fh:
        for u, v in g.edge_array():
            fh.write(f"{u} {v}\n")
    np.savetxt(features_path, g.features, delimiter=",", fmt="%.17g")
    if labels_path is not None and g.labels is not None:
        np.savetxt(labels_path, g.labels, fmt="%d")


@dataclass(frozen=True)
class SbmSpec:
    blocks: int = 6
    nodes_per_block: int = 50
    p_in: float = 0.5
    p_out: float = 0.01
    feature_dim: int = 32
    redundancy: float = 0.9
    seed: int = 0
    normalize: bool = True

    def __post_init__(self):
        for name in ("p_in", "p_out", "redundancy"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {val}")
        if self.blocks < 1 or self.nodes_per_block < 1 or self.feature_dim < 1:
            raise ValueError("blocks, nodes_per_block and feature_dim must be positive")

    @property
    def n(self):
        return self.blocks * self.nodes_per_block


def generate_sbm(spec):
    """Planted-partition graph whose node features mix a block centroid with noise.

    ``features = redundancy * centroid[block] + (1 - redundancy) * noise``,
    so ``redundancy=1`` makes every node in a block identical.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    block = np.repeat(np.arange(spec.blocks), spec.nodes_per_block)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(block[iu] == block[ju], spec.p_in, spec.p_out)
    keep = rng.random(iu.shape[0]) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    centroids = rng.standard_normal((spec.blocks, spec.feature_dim))
    noise = rng.standard_normal((n, spec.feature_dim))
    r = spec.redundancy
    features = r * centroids[block] + (1.0 - r) * noise
    return from_edges(features, edges, labels=block, normalize=spec.normalize)


def avg_degree(g):
    return 2.0 * g.num_edges / g.n


def pca95(features, threshold=0.95):
    """Number of principal components retaining ``threshold`` of the variance."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("pca95 needs at least two rows")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (x.shape[0] - 1)
    eig = np.clip(kernels.eigvalsh_desc(cov), 0.0, None)
    total = eig.sum()
    if total <= 1e-300:
        warnings.warn("pca95: features have zero variance", RuntimeWarning, stacklevel=2)
        return 0
    frac = np.cumsum(eig) / total
    # tolerance absorbs round-off when the threshold is hit exactly
    return int(np.searchsorted(frac, threshold - 1e-12) + 1)
