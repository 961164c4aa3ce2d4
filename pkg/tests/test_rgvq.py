import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gvqlab import tensor as T
from gvqlab.graph import SbmSpec, from_edges, generate_sbm
from gvqlab.rgvq import (AssignmentDistribution, ContrastiveSets, LossWeights, assignment_logits,
                         build_contrastive_sets, gumbel_softmax, infer_hard_assign, infonce_reg, load_or_build_sets,
                         rgvq_total_loss, soft_quantize)
from gvqlab.vq import Codebook, nearest_assign


def cb_of(x, **kw):
    return Codebook(T.Tensor(np.asarray(x, dtype=np.float64), requires_grad=True), **kw)


def test_logits_zero_at_exact_codeword(rng):
    c = rng.standard_normal((4, 3))
    lg = assignment_logits(T.Tensor(c[[2]]), cb_of(c)).data[0]
    assert lg[2] == 0.0 and np.all(np.delete(lg, 2) < 0)


def test_logits_gradient(rng):
    c = rng.standard_normal((4, 3))
    f = lambda h: T.sum(T.mul(assignment_logits(h, cb_of(c)), assignment_logits(h, cb_of(c))))
    assert T.finite_diff_check(f, rng.standard_normal((5, 3))) < 1e-4


def test_gumbel_low_temperature_expected_mode_is_one_hot(rng):
    lg = T.Tensor(rng.standard_normal((6, 5)))
    p = gumbel_softmax(lg, 1e-6, mode="expected").probs.data
    assert np.abs(p - np.eye(5)[np.argmax(lg.data, axis=1)]).max() < 1e-6


def test_gumbel_max_property():
    logits = np.array([[1.0, 0.0, -0.5, 2.0]])
    rng = np.random.default_rng(0)
    counts = np.zeros(4)
    for _ in range(10_000):
        counts[np.argmax(gumbel_softmax(T.Tensor(logits), 1.0, rng).probs.data)] += 1
    want = np.exp(logits[0] - logits.max())
    want /= want.sum()
    assert 0.5 * np.abs(counts / counts.sum() - want).sum() < 0.02


def test_gumbel_seeded_and_validated(rng):
    lg = T.Tensor(rng.standard_normal((3, 4)))
    assert np.array_equal(gumbel_softmax(lg, 0.5, 7).probs.data, gumbel_softmax(lg, 0.5, 7).probs.data)
    for tau in (0.0, -1.0):
        with pytest.raises(T.ParameterError):
            gumbel_softmax(lg, tau, 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), tau=st.floats(0.05, 5.0))
def test_gumbel_rows_stochastic(seed, tau):
    rng = np.random.default_rng(seed)
    p = gumbel_softmax(T.Tensor(5 * rng.standard_normal((7, 4))), tau, rng).probs.data
    assert np.all(p >= 0) and np.allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_entropy_grows_with_temperature(rng):
    lg = T.Tensor(rng.standard_normal((40, 6)))

    def ent(tau):
        vals = []
        for s in range(20):
            p = gumbel_softmax(lg, tau, s).probs.data
            vals.append(-np.sum(p * np.log(np.maximum(p, 1e-300)), axis=1).mean())
        return np.mean(vals)

    e = [ent(t) for t in (0.1, 0.5, 1.0)]
    assert e[0] <= e[1] <= e[2]


def test_soft_quantize_cases(rng):
    c = rng.standard_normal((4, 3))
    cb = cb_of(c)
    one_hot = AssignmentDistribution(T.Tensor(np.eye(4)[[1]]), 1.0)
    assert np.array_equal(soft_quantize(one_hot, cb).data[0], c[1])
    uni = AssignmentDistribution(T.Tensor(np.full((1, 4), 0.25)), 1.0)
    assert np.allclose(soft_quantize(uni, cb).data[0], c.mean(axis=0), atol=1e-15)
    h = T.Tensor(rng.standard_normal((5, 3)))
    dist = gumbel_softmax(assignment_logits(h, cb), 1.0, 0)
    T.backward(T.sum(soft_quantize(dist, cb)))
    assert np.all(np.linalg.norm(cb.entries.grad, axis=1) > 0)
    with pytest.raises(T.DimensionError):
        soft_quantize(dist, cb_of(c[:3]))


def test_infer_hard_assign_matches_nearest():
    for s in range(100):
        rng = np.random.default_rng(s)
        h, cb = T.Tensor(rng.standard_normal((8, 3))), cb_of(rng.standard_normal((5, 3)))
        a = infer_hard_assign(h, cb)
        assert np.array_equal(a.index, nearest_assign(h, cb).index)
        assert np.array_equal(a.index, infer_hard_assign(h, cb).index)


def test_low_temperature_sample_mode_matches_hard_assign():
    c = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    h = c[[0, 1, 2, 1]] + 0.5
    cb = cb_of(c)
    want = infer_hard_assign(h, cb).index
    rng = np.random.default_rng(0)
    counts = np.zeros((4, 3))
    lg = assignment_logits(T.Tensor(h), cb)
    for _ in range(10_000):
        p = gumbel_softmax(lg, 0.1, rng).probs.data
        counts[np.arange(4), np.argmax(p, axis=1)] += 1
    assert np.array_equal(np.argmax(counts, axis=1), want)


def test_sets_complete_graph():
    n = 6
    g = from_edges(np.random.default_rng(0).standard_normal((n, 3)),
                   [(i, j) for i in range(n) for j in range(i + 1, n)])
    sets = build_contrastive_sets(g, k_c=10, M=10, seed=0)
    for v in range(n):
        assert sorted(sets.positives[v]) == sorted(g.neighbors(v))
    assert sets.no_negative.all()


def test_sets_semantic_positive_without_edge():
    x = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    g = from_edges(x, [(2, 3)], normalize=False)
    sets = build_contrastive_sets(g, k_c=2, M=3, seed=0, eps=0.5, gamma=1.0)
    assert 1 in sets.positives[0] and 0 in sets.positives[1]


@pytest.mark.parametrize("mode", ["shared", "per_anchor"])
def test_sets_predicate_audit(mode):
    g = generate_sbm(SbmSpec(blocks=3, nodes_per_block=10, p_in=0.3, p_out=0.05, feature_dim=6, seed=4))
    sets = build_contrastive_sets(g, k_c=5, M=10, seed=1, negative_mode=mode)
    dist = np.linalg.norm(g.features[:, None] - g.features[None], axis=2)
    for v in range(g.n):
        assert len(sets.positives[v]) <= 5
        for u in sets.positives[v]:
            assert u != v and (g.has_edge(v, u) or dist[v, u] < sets.eps)
        for u in sets.negatives[v]:
            assert u != v and not g.has_edge(v, u) and dist[v, u] > sets.gamma


def test_sets_validation_and_determinism(tmp_path):
    g = generate_sbm(SbmSpec(blocks=2, nodes_per_block=8, seed=0))
    with pytest.raises(T.ParameterError):
        build_contrastive_sets(g, eps_quantile=0.5, gamma_quantile=0.5)
    with pytest.raises(T.ParameterError):
        build_contrastive_sets(g, k_c=5, M=4)
    a = build_contrastive_sets(g, k_c=3, M=5, seed=2)
    b = load_or_build_sets(g, tmp_path, k_c=3, M=5, seed=2)
    c = load_or_build_sets(g, tmp_path, k_c=3, M=5, seed=2)
    assert len(list(tmp_path.iterdir())) == 1
    for s in (b, c):
        assert all(np.array_equal(p, q) for p, q in zip(a.positives, s.positives))
        assert all(np.array_equal(p, q) for p, q in zip(a.negatives, s.negatives))
    with pytest.raises(ValueError):
        ContrastiveSets.from_dict({"format": "x"})


def _sets(pos, neg):
    return ContrastiveSets([np.array(p, dtype=np.int64) for p in pos], [np.array(q, dtype=np.int64) for q in neg],
                           np.zeros(0, dtype=np.int64), 0.1, 1.0, 20, 20, 0)


def test_infonce_constant_similarity():
    n = 41
    probs = T.Tensor(np.full((n, 3), 1.0 / 3))
    pos = [list(range(1, 21))] + [[] for _ in range(n - 1)]
    neg = [list(range(21, 41))] + [[] for _ in range(n - 1)]
    loss = infonce_reg(probs, _sets(pos, neg), reduction="sum").item()
    assert loss == pytest.approx(np.log(2.0), abs=1e-12)


def test_infonce_limit_near_zero():
    probs = T.Tensor(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    loss = infonce_reg(probs, _sets([[1], [], []], [[2], [], []]), sim_temperature=0.01, reduction="sum").item()
    assert loss < 1e-30


def test_infonce_gradient_and_empty(rng):
    g = generate_sbm(SbmSpec(blocks=2, nodes_per_block=4, p_in=0.8, p_out=0.1, feature_dim=3, seed=0))
    sets = build_contrastive_sets(g, k_c=3, M=3, seed=0)
    f = lambda p: infonce_reg(T.softmax_rows(p), sets)
    assert T.finite_diff_check(f, rng.standard_normal((8, 4))) < 1e-4
    assert infonce_reg(T.Tensor(np.ones((2, 2))), _sets([[], []], [[], []])).item() == 0.0


def test_total_loss_arithmetic():
    one = lambda: T.Tensor([[1.0]])
    assert rgvq_total_loss({k: T.Tensor([[0.0]]) for k in ("link", "feat", "reg")}).item() == 0.0
    parts = {k: one() for k in ("link", "feat", "reg", "commit", "vocab")}
    assert rgvq_total_loss(parts).item() == pytest.approx(102.01)
    with pytest.raises(FloatingPointError):
        rgvq_total_loss({"link": T.Tensor([[np.nan]])})
    with pytest.raises(ValueError):
        LossWeights(feat=-1.0)


def test_total_loss_reaches_every_codebook_row(rng):
    from gvqlab.vq import vq_aux_losses

    h = T.Tensor(rng.standard_normal((12, 3)), requires_grad=True)
    cb = cb_of(rng.standard_normal((6, 3)))
    dist = gumbel_softmax(T.scale(assignment_logits(h, cb), 0.1), 1.0, 0)
    assert dist.probs.data.min() > 1e-6
    z = soft_quantize(dist, cb)
    vocab, commit = vq_aux_losses(h, z, beta=1.0, reduction="mean")
    parts = {"feat": T.mean(T.mul(z, z)), "vocab": vocab, "commit": commit}
    T.backward(rgvq_total_loss(parts))
    assert np.all(np.linalg.norm(cb.entries.grad, axis=1) > 0)
    assert np.any(h.grad != 0)
