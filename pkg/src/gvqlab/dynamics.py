"""Codebook-update dynamics, the co-assignment check and redundancy sweeps."""

from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from gvqlab import kernels
from gvqlab import tensor as T
from gvqlab.encoder import encode
from gvqlab.graph import SbmSpec, avg_degree, generate_sbm, pca95
from gvqlab.vq import Assignment, Codebook, nearest_assign


def kronecker_selector(k, K):
    """K x K matrix with a single 1 at (k, k)."""
    if not 0 <= k < K:
        raise ValueError(f"selector index {k} outside [0, {K})")
    out = np.zeros((K, K))
    out[k, k] = 1.0
    return out


def _entries(cb):
    if isinstance(cb, Codebook):
        return cb.entries.data
    return np.asarray(cb, dtype=np.float64)


def analytic_update_step(cb, h, assign, eta):
    """One step of C <- C - eta E[d^T d C] + eta E[d^T h].

    ``d`` is the one-hot selector row of each input and the expectations are
    batch means. Returns a new array (or :class:`Codebook` when given one).
    """
    if not eta > 0:
        raise ValueError("eta must be > 0")
    c = _entries(cb)
    hv = h.data if isinstance(h, T.Tensor) else np.asarray(h, dtype=np.float64)
    idx = assign.index if isinstance(assign, Assignment) else np.asarray(assign, dtype=np.int64)
    K, n = c.shape[0], hv.shape[0]
    if idx.shape[0] != n or hv.shape[1] != c.shape[1]:
        raise T.DimensionError(f"update step: codebook {c.shape}, h {hv.shape}, {idx.shape[0]} assignments")
    delta = np.zeros((n, K))
    delta[np.arange(n), idx] = 1.0
    sel = delta.T @ delta / n  # E[d^T d], diagonal usage frequencies
    pull = delta.T @ hv / n  # E[d^T h]
    new = c - eta * (sel @ c) + eta * pull
    if isinstance(cb, Codebook):
        return Codebook(T.Tensor(new, requires_grad=cb.entries.requires_grad), cb.similarity, cb.ortho_weight)
    return new


def codebook_term(h, cb, assign):
    """0.5 * mean_i ||sg(h_i) - C[a_i]||^2, whose gradient step equals the update above."""
    diff = T.sub(T.stop_gradient(h), T.gather_rows(cb.entries, assign.index))
    return T.scale(T.sum(T.mul(diff, diff)), 0.5 / h.rows)


# ----------------------------------------------------------------------------
# cocoon simulation

@dataclass
class CocoonTrajectory:
    usage: np.ndarray  # steps x K expected usage
    entropy: np.ndarray
    update_norms: np.ndarray  # cumulative per-code update norm
    codebooks: list

    @property
    def perplexity(self):
        return np.exp(self.entropy)


def cocoon_sim(K, bias, steps, eta, seed, dim=8, per_code=8, rho=0.5, temperature=None, keep_codebooks=False):
    """Run the update recursion with a self-reinforcing encoder.

    ``per_code`` embeddings start near each codeword. Each step every
    embedding draws a code with probability proportional to
    ``bias_k * exp(-||h - e_k||^2 / temperature)``, the codebook takes one
    analytic step and each embedding moves a fraction ``rho * eta`` toward its
    code (the commitment direction). Codes with zero bias are never drawn.
    ``temperature`` defaults to ``dim / 2``, the scale of half the expected
    squared distance between two standard-normal codewords.
    """
    bias = np.asarray(bias, dtype=np.float64)
    if bias.shape != (K,) or np.any(bias < 0) or abs(bias.sum() - 1.0) > 1e-9:
        raise ValueError("bias must be a length-K distribution")
    temperature = dim / 2.0 if temperature is None else temperature
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((K, dim))
    h = np.repeat(c, per_code, axis=0) + 0.1 * rng.standard_normal((K * per_code, dim))
    logb = np.where(bias > 0, np.log(np.where(bias > 0, bias, 1.0)), -np.inf)
    usage, entropy, norms = [], [], np.zeros(K)
    snaps = [c.copy()] if keep_codebooks else []
    for _ in range(steps):
        logits = logb - kernels.pairwise_sq_dist(h, c) / temperature
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        u = rng.random(p.shape[0])
        a = np.minimum((p.cumsum(axis=1) < u[:, None]).sum(axis=1), K - 1)
        a = np.where(p[np.arange(p.shape[0]), a] > 0, a, np.argmax(p, axis=1))
        new = analytic_update_step(c, h, a, eta)
        norms += np.linalg.norm(new - c, axis=1)
        c = new
        h = h + rho * eta * (c[a] - h)
        q = p.mean(axis=0)
        nz = q[q > 0]
        usage.append(q)
        entropy.append(float(-np.sum(nz * np.log(nz))))
        if keep_codebooks:
            snaps.append(c.copy())
    return CocoonTrajectory(np.array(usage), np.array(entropy), norms, snaps)


# ----------------------------------------------------------------------------
# co-assignment check

@dataclass
class BoundParams:
    delta_c: float
    C1: float
    C2: float
    B_x: float
    D: np.ndarray
    L: int

    def __post_init__(self):
        if not self.delta_c > 0:
            raise ValueError("delta_c must be > 0")
        if np.any(np.asarray(self.D) < 1):
            raise ValueError("branching factors must be >= 1")

    def bound(self):
        """1 - (2 B_x / delta_c) (C1 + sum_l C2^l D_l)."""
        growth = sum(self.C2 ** (l + 1) * self.D[l] for l in range(self.L))
        return 1.0 - 2.0 * self.B_x / self.delta_c * (self.C1 + growth)


def safety_radius(cb):
    c = _entries(cb)
    if c.shape[0] < 2:
        raise ValueError("safety radius needs K >= 2")
    d2 = kernels.pairwise_sq_dist(c, c)
    iu = np.triu_indices(c.shape[0], k=1)
    return 0.5 * float(np.sqrt(max(d2[iu].min(), 0.0)))


def measure_bound_params(g, encoder, cb, lipschitz=1.0):
    """Constants measured from the network: spectral norms of the weights,
    unit-Lipschitz activation and aggregation, max degree as branching."""
    b_w1 = max(np.linalg.norm(l.w_self.data, 2) for l in encoder.layers)
    b_w2 = max(np.linalg.norm(l.w_neigh.data, 2) for l in encoder.layers)
    d_max = max(int(g.degrees().max()) if g.n else 1, 1)
    L = encoder.depth
    return BoundParams(
        delta_c=safety_radius(cb),
        C1=lipschitz * b_w1,
        C2=lipschitz * b_w2 * lipschitz * lipschitz,
        B_x=float(np.linalg.norm(g.features, axis=1).max()),
        D=np.array([float(d_max) ** (l + 1) for l in range(L)]),
        L=L,
    )


def coassign_check(g, encoder, cb, h=None):
    """Pair-exhaustive audit of the safety-radius implication.

    ``violations`` counts pairs with ||h_i - h_j|| <= delta_c that receive
    different tokens. ``ball_violations`` counts pairs lying within delta_c
    of one shared codeword yet split, which geometry forbids.
    """
    c = _entries(cb)
    if c.shape[0] < 2:
        raise ValueError("co-assignment check needs K >= 2 (delta_c undefined)")
    hv = encode(g, encoder).data if h is None else np.asarray(h, dtype=np.float64)
    assign = nearest_assign(hv, cb if isinstance(cb, Codebook) else Codebook(T.Tensor(c)))
    delta_c = safety_radius(c)
    close, split, same = kernels.coassign_scan(hv, assign.index, delta_c)
    n = hv.shape[0]
    pairs = n * (n - 1) // 2
    inside = kernels.pairwise_sq_dist(hv, c) < delta_c * delta_c
    ball_split = 0
    for k in range(c.shape[0]):
        members = np.flatnonzero(inside[:, k])
        m = assign.index[members]
        ball_split += int(np.sum(m[:, None] != m[None, :]) // 2)
    params = measure_bound_params(g, encoder, c)
    return {
        "n": n,
        "K": c.shape[0],
        "delta_c": delta_c,
        "pairs": pairs,
        "close_pairs": close,
        "violations": split,
        "ball_violations": ball_split,
        "coassign_rate": same / pairs if pairs else 1.0,
        "close_coassign_rate": (close - split) / close if close else 1.0,
        "bound": params.bound(),
        "bound_params": {"C1": params.C1, "C2": params.C2, "B_x": params.B_x, "D": params.D.tolist()},
    }


# ----------------------------------------------------------------------------
# redundancy sweep

def _spearman(x, y):
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    return float(spearmanr(x, y).statistic)


def redundancy_sweep(specs, config, train_fn=None):
    """Train vanilla VQ per SBM spec; rows of (pca95, avg degree, best perplexity).

    Returns ``(rows, correlations)``; a correlation is ``None`` when it is
    undefined (fewer than two cells or a constant column).
    """
    from gvqlab.train import train

    train_fn = train_fn or train
    rows = []
    for spec in specs:
        g = generate_sbm(spec)
        res = train_fn(config.replace(method="vanilla"), graph=g)
        rows.append({"redundancy": spec.redundancy, "p_in": spec.p_in, "pca95": pca95(g.features),
                     "avg_degree": avg_degree(g), "perplexity": res.best_perplexity})
    pca = [r["pca95"] for r in rows]
    deg = [r["avg_degree"] for r in rows]
    ppl = [r["perplexity"] for r in rows]
    corr = {"pca95": _spearman(pca, ppl), "avg_degree": _spearman(deg, ppl), "defined": len(rows) > 1}
    return rows, corr


def sweep_specs(axis, values, base=None, seed=0):
    base = base or SbmSpec(seed=seed)
    field = {"redundancy": "redundancy", "density": "p_in"}[axis]
    return [SbmSpec(**{**base.__dict__, field: v, "seed": seed}) for v in values]
