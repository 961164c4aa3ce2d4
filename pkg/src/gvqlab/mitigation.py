"""Collapse-mitigation baselines: EMA codebook, dead-code reset, affine
adaptation, pretrained encoder and SimVQ-style reparameterization."""

from dataclasses import dataclass, field

import numpy as np

from gvqlab import tensor as T
from gvqlab.vq import Codebook

KINDS = ("none", "ema", "reset", "affine", "pretrain", "simvq")
EMA_EPS = 1e-5


@dataclass(frozen=True)
class MitigationConfig:
    kind: str = "none"
    ema_decay: float = 0.9
    dead_threshold: int = 10
    pretrain_epochs: int = 50

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown mitigation {self.kind!r}; expected one of {KINDS}")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError(f"ema_decay must lie in (0, 1), got {self.ema_decay}")
        if self.dead_threshold < 1 or self.pretrain_epochs < 1:
            raise ValueError("dead_threshold and pretrain_epochs must be >= 1")


# ----------------------------------------------------------------------------
# EMA

@dataclass
class EmaState:
    """Smoothed per-code assignment counts and embedding sums.

    Starts at (1, current entry) per code, so a code that is never assigned
    keeps its accumulators and its entry exactly.
    """

    cluster_size: np.ndarray
    embed_sum: np.ndarray

    @classmethod
    def from_codebook(cls, cb):
        return cls(np.ones(cb.K), cb.entries.data.copy())


def ema_update(cb, h, a, decay, state=None):
    """Move assigned codewords toward the running mean of their members, in place.

    Returns the (updated) :class:`EmaState`. Only codes with at least one
    member this step touch their accumulators.
    """
    if not 0.0 < decay < 1.0:
        raise ValueError(f"decay must lie in (0, 1), got {decay}")
    if state is None:
        state = EmaState.from_codebook(cb)
    hv = h.data if isinstance(h, T.Tensor) else np.asarray(h, dtype=np.float64)
    counts = np.bincount(a.index, minlength=cb.K).astype(np.float64)
    sums = np.zeros_like(state.embed_sum)
    np.add.at(sums, a.index, hv)
    used = counts > 0
    state.cluster_size[used] = decay * state.cluster_size[used] + (1.0 - decay) * counts[used]
    state.embed_sum[used] = decay * state.embed_sum[used] + (1.0 - decay) * sums[used]
    cb.entries.data[used] = state.embed_sum[used] / (state.cluster_size[used, None] + EMA_EPS)
    return state


# ----------------------------------------------------------------------------
# dead-code reset

@dataclass
class UsageHistory:
    """Per-epoch hard-assignment counts, with per-code idle streaks."""

    K: int
    epochs: list = field(default_factory=list)
    idle: np.ndarray = None

    def __post_init__(self):
        if self.idle is None:
            self.idle = np.zeros(self.K, dtype=np.int64)

    def append(self, counts):
        counts = np.asarray(counts)
        self.epochs.append(counts.copy())
        self.idle = np.where(counts > 0, 0, self.idle + 1)

    def mark_reset(self, codes):
        self.idle[np.asarray(codes, dtype=np.int64)] = 0

    @classmethod
    def from_counts(cls, rows):
        rows = np.asarray(rows)
        hist = cls(rows.shape[1])
        for r in rows:
            hist.append(r)
        return hist


def codebook_reset(cb, usage_history, h, dead_threshold, seed):
    """Replace codes idle for ``dead_threshold`` consecutive epochs with random rows of ``h``.

    Mutates ``cb`` in place and returns the replaced code indices. Accepts a
    :class:`UsageHistory` or an (epochs x K) count array.
    """
    hist = usage_history if isinstance(usage_history, UsageHistory) else UsageHistory.from_counts(usage_history)
    dead = np.flatnonzero(hist.idle >= dead_threshold)
    if dead.size == 0:
        return dead
    hv = h.data if isinstance(h, T.Tensor) else np.asarray(h, dtype=np.float64)
    rng = np.random.default_rng(seed)
    rows = rng.choice(hv.shape[0], size=dead.size, replace=dead.size > hv.shape[0])
    cb.entries.data[dead] = hv[rows]
    hist.mark_reset(dead)
    return dead


# ----------------------------------------------------------------------------
# affine adaptation

@dataclass
class AffineParams:
    scale: T.Tensor
    shift: T.Tensor

    @classmethod
    def identity(cls, d):
        return cls(T.Tensor(np.ones((1, d)), requires_grad=True), T.Tensor(np.zeros((1, d)), requires_grad=True))

    def tensors(self):
        return [self.scale, self.shift]


def affine_adapt(h, scale, shift):
    """Per-dimension ``h * scale + shift`` applied before quantization."""
    return T.add_row(T.mul_row(h, scale), shift)


# ----------------------------------------------------------------------------
# SimVQ

@dataclass
class SimVQParams:
    """Frozen latent basis (K x d) and a learnable d x d projection."""

    basis: T.Tensor
    proj: T.Tensor

    @classmethod
    def from_codebook(cls, cb):
        return cls(T.Tensor(cb.entries.data.copy()), T.Tensor(np.eye(cb.dim), requires_grad=True))

    def tensors(self):
        return [self.proj]


def simvq_project(basis, proj):
    """Effective codebook ``basis @ proj``; only ``proj`` is trainable."""
    if basis.requires_grad:
        basis = T.stop_gradient(basis)
    return T.matmul(basis, proj)


def simvq_codebook(params, similarity="euclidean", ortho_weight=0.0):
    return Codebook(simvq_project(params.basis, params.proj), similarity=similarity, ortho_weight=ortho_weight)
