"""Finite-difference suite over every differentiable op and the full objective."""

from dataclasses import dataclass, replace

import numpy as np

from gvqlab import tensor as T
from gvqlab.encoder import decode, encode, init_decoder, init_params
from gvqlab.graph import from_edges
from gvqlab.rgvq import (LossWeights, assignment_logits, build_contrastive_sets, gumbel_softmax, infonce_reg,
                         rgvq_total_loss, soft_quantize)
from gvqlab.vq import Codebook, all_link_pairs, feature_loss, link_loss_from_pairs, ortho_penalty, vq_aux_losses

OP_TOL = 1e-4
COMPOSITE_TOL = 1e-3
STEP = 1e-5
FLOOR = 1e-6


@dataclass
class Check:
    name: str
    error: float
    tol: float

    @property
    def ok(self):
        return self.error < self.tol


def toy_graph(seed=0, n=6, f=4):
    """Six nodes: a 4-cycle with a chord plus a pendant pair."""
    rng = np.random.default_rng(seed)
    edges = [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (4, 5), (3, 4)][: max(n + 1, 1)]
    return from_edges(rng.standard_normal((n, f)), edges)


def _probe(shape, rng):
    return T.Tensor(rng.standard_normal(shape))


def _reduce(out, w):
    return T.sum(T.mul(out, w))


def op_cases(seed=0):
    """(name, f, x) triples; each f maps one Tensor input to a scalar."""
    rng = np.random.default_rng(seed)
    g = toy_graph(seed)
    a = rng.standard_normal((4, 3))
    b = T.Tensor(rng.standard_normal((3, 5)))
    same = T.Tensor(rng.standard_normal((4, 3)))
    row = T.Tensor(rng.standard_normal((1, 3)))
    col = T.Tensor(rng.standard_normal((4, 1)))
    w43, w45, w44 = _probe((4, 3), rng), _probe((4, 5), rng), _probe((4, 4), rng)
    w41 = _probe((4, 1), rng)
    pos = np.abs(a) + 0.5
    # keep relu/elu inputs away from the kink at zero
    kinked = np.where(np.abs(a) < 0.1, a + 0.3 * np.sign(a + 1e-3), a)
    seg = np.array([0, 0, 1, 2, 2, 2])
    h6 = rng.standard_normal((6, 3))
    w63 = _probe((6, 3), rng)
    idx = np.array([0, 2, 2, 3, 1])
    w53 = _probe((5, 3), rng)
    cases = [
        ("matmul.left", lambda x: _reduce(T.matmul(x, b), w45), a),
        ("matmul.right", lambda x: _reduce(T.matmul(T.Tensor(a), x), w45), b.data),
        ("add", lambda x: _reduce(T.add(x, same), w43), a),
        ("sub", lambda x: _reduce(T.sub(same, x), w43), a),
        ("mul", lambda x: _reduce(T.mul(x, same), w43), a),
        ("mul.self", lambda x: _reduce(T.mul(x, x), w43), a),
        ("scale", lambda x: _reduce(T.scale(x, -2.5), w43), a),
        ("add_row.row", lambda x: _reduce(T.add_row(same, x), w43), row.data),
        ("mul_row.row", lambda x: _reduce(T.mul_row(same, x), w43), row.data),
        ("mul_row.mat", lambda x: _reduce(T.mul_row(x, row), w43), a),
        ("mul_col.col", lambda x: _reduce(T.mul_col(same, x), w43), col.data),
        ("transpose", lambda x: _reduce(T.transpose(T.transpose(x)), w43), a),
        ("relu", lambda x: _reduce(T.relu(x), w43), kinked),
        ("elu", lambda x: _reduce(T.elu(x), w43), kinked),
        ("sigmoid", lambda x: _reduce(T.sigmoid(x), w43), a),
        ("exp", lambda x: _reduce(T.exp(x), w43), a),
        ("log", lambda x: _reduce(T.log(x), w43), pos),
        ("identity", lambda x: _reduce(T.identity(x), w43), a),
        ("softmax_rows", lambda x: _reduce(T.softmax_rows(x, 0.5), w43), a),
        ("log_softmax_rows", lambda x: _reduce(T.log_softmax_rows(x), w43), a),
        ("row_normalize", lambda x: _reduce(T.row_normalize(x), w43), a),
        ("sum", lambda x: T.scale(T.sum(T.mul(x, x)), 0.5), a),
        ("mean", lambda x: T.mean(T.mul(x, same)), a),
        ("sum_rows", lambda x: _reduce(T.sum_rows(x), w41), a),
        ("rowdot", lambda x: _reduce(T.rowdot(x, same), w41), a),
        ("pairwise_sq_dist.left", lambda x: _reduce(T.pairwise_sq_dist(x, T.Tensor(a)), w44), same.data),
        ("pairwise_sq_dist.self", lambda x: _reduce(T.pairwise_sq_dist(x, x), w44), a),
        ("gather_rows", lambda x: _reduce(T.gather_rows(x, idx), w53), a),
        ("segment_logsumexp", lambda x: _reduce(T.segment_logsumexp(x, seg, 3), _probe((3, 1), np.random.default_rng(1))),
         rng.standard_normal((6, 1))),
    ]
    for kind in ("mean", "sum", "max"):
        cases.append((f"csr_aggregate.{kind}", lambda x, k=kind: _reduce(T.csr_aggregate(x, g.indptr, g.indices, k), w63), h6))
    return cases


def _toy_model(seed=0):
    g = toy_graph(seed)
    enc = init_params([g.num_features, 5, 4], seed)
    dec = init_decoder(4, g.num_features, seed + 1, hidden=3)
    rng = np.random.default_rng(seed + 2)
    cb = Codebook(T.Tensor(rng.standard_normal((3, 4)), requires_grad=True))
    sets = build_contrastive_sets(g, k_c=2, M=3, seed=seed, negative_mode="per_anchor", eps_quantile=0.4,
                                  gamma_quantile=0.6)
    return g, enc, dec, cb, sets


def model_cases(seed=0):
    g, enc, dec, cb, sets = _toy_model(seed)
    rng = np.random.default_rng(seed + 3)
    h = encode(g, enc).data
    probs = gumbel_softmax(assignment_logits(T.Tensor(h), cb), 0.7, 11).probs.data
    u, v, t = all_link_pairs(g)
    w64 = _probe((6, 4), rng)
    w63 = _probe((6, 3), rng)

    def with_entries(x):
        return Codebook(x, similarity=cb.similarity)

    return [
        ("encoder.w_self", lambda x: _reduce(encode(g, _swap(enc, 0, "w_self", x)), w64), enc.layers[0].w_self.data),
        ("encoder.w_neigh", lambda x: _reduce(encode(g, _swap(enc, 1, "w_neigh", x)), w64), enc.layers[1].w_neigh.data),
        ("decoder", lambda x: _reduce(decode(x, dec), _probe((6, g.num_features), np.random.default_rng(5))), h),
        ("assignment_logits.h", lambda x: _reduce(assignment_logits(x, cb), w63), h),
        ("assignment_logits.C", lambda x: _reduce(assignment_logits(T.Tensor(h), with_entries(x)), w63), cb.entries.data),
        ("gumbel_softmax", lambda x: _reduce(gumbel_softmax(x, 0.5, 7).probs, w63), rng.standard_normal((6, 3))),
        ("soft_quantize.C", lambda x: _reduce(soft_quantize(gumbel_softmax(T.Tensor(-np.ones((6, 3))), 1.0, 3),
                                                            with_entries(x)), w64), cb.entries.data),
        ("vq_aux.vocab", lambda x: vq_aux_losses(T.Tensor(h), T.gather_rows(x, np.array([0, 1, 1, 2, 0, 2])))[0],
         cb.entries.data),
        ("vq_aux.commit", lambda x: vq_aux_losses(x, T.Tensor(cb.entries.data[[0, 1, 1, 2, 0, 2]]), beta=0.3)[1], h),
        ("ortho_penalty", lambda x: ortho_penalty(with_entries(x)), cb.entries.data),
        ("link_loss", lambda x: link_loss_from_pairs(x, u, v, t), h),
        ("feature_loss", lambda x: feature_loss(g, x, dec), h),
        ("infonce_reg", lambda x: infonce_reg(x, sets, 0.5), probs),
    ]


def _swap(enc, layer, name, x):
    layers = list(enc.layers)
    layers[layer] = replace(layers[layer], **{name: x})
    return replace(enc, layers=layers)


def composite_loss(g, enc, dec, cb, sets, tau=0.5, noise_seed=13, weights=LossWeights(), frozen=None):
    """Full weighted objective on a toy instance.

    Finite differences see through stop-gradients, so for the numeric side
    ``frozen=(h0, z0)`` replaces sg[h] and sg[z] by their values at the base
    point; the result then has the tape gradient as its true gradient.
    """
    h = encode(g, enc)
    dist = gumbel_softmax(assignment_logits(h, cb), tau, noise_seed)
    z = soft_quantize(dist, cb)
    if frozen is None:
        vocab, commit = vq_aux_losses(h, z, reduction="mean")
    else:
        d1, d2 = T.sub(T.Tensor(frozen[0]), z), T.sub(h, T.Tensor(frozen[1]))
        vocab = T.scale(T.sum(T.mul(d1, d1)), 1.0 / h.rows)
        commit = T.scale(T.sum(T.mul(d2, d2)), 1.0 / h.rows)
    u, v, t = all_link_pairs(g)
    parts = {"feat": feature_loss(g, z, dec), "link": link_loss_from_pairs(z, u, v, t), "vocab": vocab,
             "commit": commit, "reg": infonce_reg(dist, sets, 0.5), "ortho": ortho_penalty(cb)}
    return rgvq_total_loss(parts, weights)


def composite_cases(seed=0):
    """(name, tape f, numeric f, x) for the encoder, codebook and decoder groups."""
    g, enc, dec, cb, sets = _toy_model(seed)
    h0 = encode(g, enc)
    z0 = soft_quantize(gumbel_softmax(assignment_logits(h0, cb), 0.5, 13), cb)
    frozen = (h0.data, z0.data)
    builders = [
        ("composite.encoder", lambda x: (_swap(enc, 0, "w_self", x), dec, cb), enc.layers[0].w_self.data),
        ("composite.codebook", lambda x: (enc, dec, Codebook(x)), cb.entries.data),
        ("composite.decoder", lambda x: (enc, replace(dec, w2=x), cb), dec.w2.data),
    ]
    return [(name, lambda x, b=b: composite_loss(g, *b(x), sets),
             lambda x, b=b: composite_loss(g, *b(x), sets, frozen=frozen), x0) for name, b, x0 in builders]


def semigrad_check(f_tape, f_numeric, x, h=STEP, floor=FLOOR):
    """Like :func:`finite_diff_check` but differences a separate surrogate."""
    probe = T.Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    T.backward(f_tape(probe))
    analytic = probe.grad
    numeric = np.zeros_like(analytic)
    for idx in np.ndindex(analytic.shape):
        plus, minus = np.array(x, dtype=np.float64), np.array(x, dtype=np.float64)
        plus[idx] += h
        minus[idx] -= h
        numeric[idx] = (f_numeric(T.Tensor(plus)).item() - f_numeric(T.Tensor(minus)).item()) / (2.0 * h)
    return float((np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)).max())


def run_suite(seed=0):
    checks = []
    for name, f, x in op_cases(seed) + model_cases(seed):
        checks.append(Check(name, T.finite_diff_check(f, x, h=STEP, floor=FLOOR), OP_TOL))
    for name, f_tape, f_num, x in composite_cases(seed):
        checks.append(Check(name, semigrad_check(f_tape, f_num, x), COMPOSITE_TOL))
    return checks
