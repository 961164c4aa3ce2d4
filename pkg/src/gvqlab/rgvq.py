"""Regularized graph VQ: Gumbel-Softmax soft assignment plus a structure-aware
InfoNCE regularizer on the assignment distributions."""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from gvqlab import kernels
from gvqlab import tensor as T
from gvqlab.vq import Assignment, kernels_normalize

GUMBEL_CLAMP = 1e-10
COSINE_LOGIT_SCALE = 10.0


@dataclass
class AssignmentDistribution:
    probs: T.Tensor
    temperature: float
    mode: str = "sampled"

    @property
    def K(self):
        return self.probs.cols


def assignment_logits(h, cb):
    """pi = -||h_i - e_j||^2 (euclidean) or a scaled cosine similarity."""
    if cb.similarity == "cosine":
        sim = T.matmul(T.row_normalize(h), T.transpose(T.row_normalize(cb.entries)))
        return T.scale(sim, COSINE_LOGIT_SCALE)
    return T.scale(T.pairwise_sq_dist(h, cb.entries), -1.0)


def gumbel_noise(shape, rng):
    u = np.clip(rng.random(shape), GUMBEL_CLAMP, 1.0 - GUMBEL_CLAMP)
    return -np.log(-np.log(u))


def gumbel_softmax(logits, tau, rng=None, mode="sampled"):
    """softmax_tau(log softmax(pi) + g) with g ~ Gumbel(0, 1).

    ``rng`` is a numpy Generator or an integer seed. ``mode="expected"``
    drops the noise, giving softmax(pi / tau) for deterministic checks.
    """
    if not tau > 0:
        raise T.ParameterError(f"Gumbel-Softmax temperature must be > 0, got {tau}")
    logp = T.log_softmax_rows(logits)
    if mode == "sampled":
        if rng is None or isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(rng)
        logp = T.add(logp, T.Tensor(gumbel_noise(logits.shape, rng)))
    elif mode != "expected":
        raise ValueError(f"unknown mode {mode!r}")
    return AssignmentDistribution(T.softmax_rows(logp, tau), tau, mode)


def soft_quantize(dist, cb):
    """z~_i = sum_j p~_ij e_j."""
    if dist.K != cb.K:
        raise T.DimensionError(f"distribution over {dist.K} codes, codebook has {cb.K}")
    return T.matmul(dist.probs, cb.entries)


def infer_hard_assign(h, cb):
    """Deterministic argmax of the assignment logits; no noise."""
    hv = h.data if isinstance(h, T.Tensor) else np.asarray(h, dtype=np.float64)
    cv = cb.entries.data
    if cb.similarity == "cosine":
        logits = COSINE_LOGIT_SCALE * (kernels_normalize(hv) @ kernels_normalize(cv).T)
    else:
        logits = -kernels.pairwise_sq_dist(hv, cv)
    return Assignment(np.argmax(logits, axis=1).astype(np.int64), cb.K)


# ----------------------------------------------------------------------------
# contrastive sets

@dataclass
class ContrastiveSets:
    """Per-anchor positive and negative node lists plus the thresholds used.

    ``shared_negatives`` is the common pool; in shared mode each anchor keeps
    the members of that pool that satisfy its own negative predicate.
    """

    positives: list
    negatives: list
    shared_negatives: np.ndarray
    eps: float
    gamma: float
    k_c: int
    M: int
    seed: int
    negative_mode: str = "shared"
    key: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.positives)

    @property
    def short_positive(self):
        return np.array([len(p) < self.k_c for p in self.positives])

    @property
    def no_negative(self):
        return np.array([len(q) == 0 for q in self.negatives])

    @property
    def thresholds_degenerate(self):
        return not (np.isfinite(self.eps) and np.isfinite(self.gamma) and self.gamma > self.eps > 0)

    def diagnostics(self):
        return {
            "nodes": self.n,
            "short_positive": int(self.short_positive.sum()),
            "no_negative": int(self.no_negative.sum()),
            "mean_positives": float(np.mean([len(p) for p in self.positives])) if self.n else 0.0,
            "mean_negatives": float(np.mean([len(q) for q in self.negatives])) if self.n else 0.0,
            "eps": self.eps,
            "gamma": self.gamma,
            "thresholds_degenerate": self.thresholds_degenerate,
        }

    def to_dict(self):
        return {
            "format": "gvqlab-contrastive-sets",
            "version": 1,
            "key": self.key,
            "eps": self.eps,
            "gamma": self.gamma,
            "k_c": self.k_c,
            "M": self.M,
            "seed": self.seed,
            "negative_mode": self.negative_mode,
            "shared_negatives": self.shared_negatives.tolist(),
            "positives": [p.tolist() for p in self.positives],
            "negatives": [q.tolist() for q in self.negatives],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "gvqlab-contrastive-sets" or d.get("version") != 1:
            raise ValueError("not a version-1 contrastive-set file")
        return cls(
            positives=[np.asarray(p, dtype=np.int64) for p in d["positives"]],
            negatives=[np.asarray(q, dtype=np.int64) for q in d["negatives"]],
            shared_negatives=np.asarray(d["shared_negatives"], dtype=np.int64),
            eps=float(d["eps"]),
            gamma=float(d["gamma"]),
            k_c=int(d["k_c"]),
            M=int(d["M"]),
            seed=int(d["seed"]),
            negative_mode=d.get("negative_mode", "shared"),
            key=d.get("key", {}),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def sidecar_key(g, k_c, eps_quantile, gamma_quantile, M, seed, negative_mode="shared"):
    return {
        "graph": g.fingerprint(),
        "k_c": int(k_c),
        "eps_quantile": float(eps_quantile),
        "gamma_quantile": float(gamma_quantile),
        "M": int(M),
        "seed": int(seed),
        "negative_mode": negative_mode,
    }


def sidecar_path(directory, key):
    tag = "-".join(f"{k}={key[k]}" for k in sorted(key))
    return Path(directory) / f"sets-{hashlib.sha256(tag.encode()).hexdigest()[:16]}.json"


def _sample_non_neighbors(g, v, M, rng):
    mask = np.ones(g.n, dtype=bool)
    mask[v] = False
    mask[g.neighbors(v)] = False
    pool = np.flatnonzero(mask)
    if pool.shape[0] <= M:
        return pool
    return np.sort(rng.choice(pool, size=M, replace=False))


def build_contrastive_sets(g, k_c=20, eps_quantile=0.1, gamma_quantile=0.9, M=100, seed=0,
                           negative_mode="shared", eps=None, gamma=None, n_probe=None):
    """Positive / negative node sets per anchor.

    Candidates for anchor v are its neighbours plus ``M`` sampled
    non-neighbours. ``eps`` and ``gamma`` default to the given quantiles of
    the sampled non-neighbour feature distances. Positives are neighbours by
    ascending feature distance, then non-neighbours closer than ``eps``,
    truncated to ``k_c``. Negatives are non-adjacent nodes farther than
    ``gamma``: drawn once from a shared pool (``negative_mode="shared"``) or
    per anchor from its own samples (``"per_anchor"``). Anchors with too few
    candidates keep shorter lists; see :meth:`ContrastiveSets.diagnostics`.
    """
    if not gamma_quantile > eps_quantile:
        raise T.ParameterError(f"gamma quantile ({gamma_quantile}) must exceed eps quantile ({eps_quantile})")
    if M < k_c:
        raise T.ParameterError(f"M ({M}) must be at least k_c ({k_c})")
    if negative_mode not in ("shared", "per_anchor"):
        raise ValueError(f"unknown negative mode {negative_mode!r}")
    x = g.features
    n = g.n
    samples, sample_d, neigh_d = [], [], []
    for v in range(n):
        rng_v = np.random.default_rng([seed, v])
        cand = _sample_non_neighbors(g, v, M, rng_v)
        samples.append(cand)
        sample_d.append(kernels.pair_dist(x, np.full(cand.shape[0], v), cand))
        nb = g.neighbors(v)
        neigh_d.append(kernels.pair_dist(x, np.full(nb.shape[0], v), nb))
    pooled = np.concatenate(sample_d) if n else np.zeros(0)
    if eps is None:
        eps = float(np.quantile(pooled, eps_quantile)) if pooled.size else float("nan")
    if gamma is None:
        gamma = float(np.quantile(pooled, gamma_quantile)) if pooled.size else float("nan")

    positives = []
    for v in range(n):
        nb = g.neighbors(v)
        order = np.lexsort((nb, neigh_d[v]))
        sem = sample_d[v] < eps
        sem_nodes, sem_d = samples[v][sem], sample_d[v][sem]
        sem_order = np.lexsort((sem_nodes, sem_d))
        positives.append(np.concatenate([nb[order], sem_nodes[sem_order]])[:k_c].astype(np.int64))

    rng = np.random.default_rng([seed, n, 7])
    negatives = []
    if negative_mode == "per_anchor":
        shared = np.zeros(0, dtype=np.int64)
        for v in range(n):
            far = samples[v][sample_d[v] > gamma]
            rng_v = np.random.default_rng([seed, v, 1])
            pick = far if far.shape[0] <= k_c else rng_v.choice(far, size=k_c, replace=False)
            negatives.append(np.sort(pick).astype(np.int64))
    else:
        n_probe = min(n, n_probe or k_c)
        probes = rng.choice(n, size=n_probe, replace=False) if n else np.zeros(0, dtype=np.int64)
        eligible = np.zeros(n, dtype=bool)
        for p in probes:
            d = kernels.pair_dist(x, np.full(n, p), np.arange(n))
            ok = d > gamma
            ok[p] = False
            ok[g.neighbors(p)] = False
            eligible |= ok
        pool = np.flatnonzero(eligible)
        shared = pool if pool.shape[0] <= k_c else np.sort(rng.choice(pool, size=k_c, replace=False))
        shared = shared.astype(np.int64)
        for v in range(n):
            if shared.shape[0] == 0:
                negatives.append(np.zeros(0, dtype=np.int64))
                continue
            d = kernels.pair_dist(x, np.full(shared.shape[0], v), shared)
            adj = np.array([g.has_edge(v, u) for u in shared], dtype=bool)
            keep = (d > gamma) & ~adj & (shared != v)
            negatives.append(shared[keep])

    key = sidecar_key(g, k_c, eps_quantile, gamma_quantile, M, seed, negative_mode)
    return ContrastiveSets(positives, negatives, shared, float(eps), float(gamma), int(k_c), int(M), int(seed),
                           negative_mode, key)


def load_or_build_sets(g, directory, **kwargs):
    """Cached :func:`build_contrastive_sets`; the sidecar is keyed by graph hash and settings."""
    key = sidecar_key(g, kwargs.get("k_c", 20), kwargs.get("eps_quantile", 0.1), kwargs.get("gamma_quantile", 0.9),
                      kwargs.get("M", 100), kwargs.get("seed", 0), kwargs.get("negative_mode", "shared"))
    path = sidecar_path(directory, key)
    if path.exists():
        sets = ContrastiveSets.load(path)
        if sets.key == key:
            return sets
    sets = build_contrastive_sets(g, **kwargs)
    Path(directory).mkdir(parents=True, exist_ok=True)
    sets.save(path)
    return sets


def _pair_layout(sets):
    anchors, others, is_pos, seg = [], [], [], []
    valid = []
    for v in range(sets.n):
        pos, neg = sets.positives[v], sets.negatives[v]
        if pos.shape[0] == 0:
            continue
        s = len(valid)
        valid.append(v)
        k = pos.shape[0] + neg.shape[0]
        anchors.append(np.full(k, v))
        others.append(np.concatenate([pos, neg]))
        is_pos.append(np.concatenate([np.ones(pos.shape[0], bool), np.zeros(neg.shape[0], bool)]))
        seg.append(np.full(k, s))
    if not valid:
        return None
    return (np.concatenate(anchors).astype(np.int64), np.concatenate(others).astype(np.int64),
            np.concatenate(is_pos), np.concatenate(seg).astype(np.int64), len(valid))


def infonce_reg(dist, sets, sim_temperature=0.5, reduction="mean"):
    """InfoNCE over assignment distributions.

    L_i = -log( sum_{P} exp(sim_ij) / sum_{P u N} exp(sim_ij) ) with
    sim = cosine(p~_i, p~_j) / sim_temperature. Anchors without positives
    contribute zero; ``reduction="mean"`` divides the sum by the node count.
    """
    probs = dist.probs if isinstance(dist, AssignmentDistribution) else dist
    layout = _pair_layout(sets)
    if layout is None:
        return T.Tensor([[0.0]])
    anchors, others, is_pos, seg, n_valid = layout
    u = T.row_normalize(probs)
    sim = T.scale(T.rowdot(T.gather_rows(u, anchors), T.gather_rows(u, others)), 1.0 / sim_temperature)
    lse_all = T.segment_logsumexp(sim, seg, n_valid)
    pos_rows = np.flatnonzero(is_pos)
    lse_pos = T.segment_logsumexp(T.gather_rows(sim, pos_rows), seg[pos_rows], n_valid)
    total = T.sum(T.sub(lse_all, lse_pos))
    if reduction == "mean":
        return T.scale(total, 1.0 / probs.rows)
    if reduction == "sum":
        return total
    raise ValueError(f"unknown reduction {reduction!r}")


# ----------------------------------------------------------------------------
# combined objective

@dataclass(frozen=True)
class LossWeights:
    link: float = 0.01
    feat: float = 100.0
    reg: float = 1.0
    commit: float = 0.1
    vocab: float = 0.9
    ortho: float = 0.1

    def __post_init__(self):
        for name, val in self.__dict__.items():
            if val < 0:
                raise ValueError(f"loss weight {name} must be >= 0, got {val}")


def rgvq_total_loss(parts, weights=LossWeights()):
    """Weighted sum of the loss components present in ``parts``.

    ``parts`` maps component names (link, feat, reg, commit, vocab, ortho)
    to 1 x 1 tensors; absent components are skipped.
    """
    total: Optional[T.Tensor] = None
    for name, value in parts.items():
        if value is None:
            continue
        w = getattr(weights, name)
        if not np.isfinite(value.item()):
            raise FloatingPointError(f"loss component {name} is not finite")
        term = T.scale(value, w)
        total = term if total is None else T.add(total, term)
    return total if total is not None else T.Tensor([[0.0]])
