import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gvqlab import tensor as T
from gvqlab.encoder import init_decoder
from gvqlab.graph import SbmSpec, from_edges, generate_sbm
from gvqlab.rgvq import assignment_logits
from gvqlab.vq import (Assignment, Codebook, active_codes, all_link_pairs, dense_link_loss, feature_loss,
                       gather_codewords, kmeans, kmeans_init, nearest_assign, ortho_penalty, perplexity,
                       recon_losses, sample_link_pairs, ste_quantize, vq_aux_losses)


def cb_of(x, **kw):
    return Codebook(T.Tensor(np.asarray(x, dtype=np.float64), requires_grad=True), **kw)


def test_exact_codeword_and_tie_rule():
    c = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2.0, 2.0], [-1.0, 0.0]])
    assert nearest_assign(T.Tensor([[2.0, 2.0]]), cb_of(c)).index[0] == 3
    # equidistant to codes 1 and 4
    c2 = np.array([[5.0, 5.0], [1.0, 0.0], [6.0, 6.0], [7.0, 7.0], [-1.0, 0.0]])
    assert nearest_assign(T.Tensor([[0.0, 0.0]]), cb_of(c2)).index[0] == 1


def test_nearest_assign_matches_exhaustive_scan(rng):
    h, c = rng.standard_normal((10, 4)), rng.standard_normal((6, 4))
    oracle = [min(range(6), key=lambda j: sum((h[i, k] - c[j, k]) ** 2 for k in range(4))) for i in range(10)]
    assert list(nearest_assign(T.Tensor(h), cb_of(c)).index) == oracle


def test_cosine_assignment_uses_normalised_vectors():
    c = np.array([[10.0, 0.0], [0.0, 0.1]])
    cb = cb_of(c, similarity="cosine")
    assert nearest_assign(T.Tensor([[0.1, 1.0]]), cb).index[0] == 1
    assert np.array_equal(cb.entries.data, c)


def test_assign_errors():
    with pytest.raises(ValueError):
        Codebook(T.Tensor(np.zeros((0, 2))))
    with pytest.raises(T.DimensionError):
        nearest_assign(T.Tensor(np.ones((2, 3))), cb_of(np.ones((2, 2))))
    with pytest.raises(ValueError):
        Assignment(np.array([0, 3]), 3)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 12), K=st.integers(1, 7))
def test_nearest_assign_is_argmax_of_logits(seed, n, K):
    rng = np.random.default_rng(seed)
    h, cb = T.Tensor(rng.standard_normal((n, 3))), cb_of(rng.standard_normal((K, 3)))
    assert np.array_equal(nearest_assign(h, cb).index, np.argmax(assignment_logits(h, cb).data, axis=1))


def test_ste_forward_and_backward(rng):
    h = T.Tensor(rng.standard_normal((5, 3)), requires_grad=True)
    cb = cb_of(rng.standard_normal((4, 3)))
    a = nearest_assign(h, cb)
    z = ste_quantize(h, cb, a)
    assert np.array_equal(z.data, cb.entries.data[a.index])
    T.backward(T.sum(z))
    assert np.array_equal(h.grad, np.ones((5, 3)))
    assert np.array_equal(cb.entries.grad, np.zeros((4, 3)))


def test_aux_losses_values_and_routing(rng):
    n, d, beta = 4, 3, 0.25
    zv = rng.standard_normal((n, d))
    cbl, com = vq_aux_losses(T.Tensor(zv), T.Tensor(zv), beta)
    assert cbl.item() == 0.0 and com.item() == 0.0
    cbl, com = vq_aux_losses(T.Tensor(zv + 1.0), T.Tensor(zv), beta)
    assert cbl.item() == pytest.approx(n * d) and com.item() == pytest.approx(beta * n * d)
    h = T.Tensor(rng.standard_normal((n, d)), requires_grad=True)
    cb = cb_of(rng.standard_normal((3, d)))
    a = nearest_assign(h, cb)
    cbl, _ = vq_aux_losses(h, gather_codewords(cb, a))
    T.backward(cbl)
    assert np.all(h.grad == 0) and np.any(cb.entries.grad != 0)
    h.grad = cb.entries.grad = None
    _, com = vq_aux_losses(h, gather_codewords(cb, a), beta)
    T.backward(com)
    assert np.any(h.grad != 0) and np.all(cb.entries.grad == 0)
    with pytest.raises(ValueError):
        vq_aux_losses(h, h, -1.0)


def test_unassigned_rows_have_exactly_zero_gradient(rng):
    h = T.Tensor(rng.standard_normal((6, 2)))
    cb = cb_of(np.vstack([rng.standard_normal((3, 2)), 100 + rng.standard_normal((3, 2))]))
    a = nearest_assign(h, cb)
    cbl, _ = vq_aux_losses(h, gather_codewords(cb, a), beta=0.0)
    T.backward(cbl)
    unused = np.setdiff1d(np.arange(6), a.index)
    assert unused.size >= 3
    assert np.array_equal(cb.entries.grad[unused], np.zeros((unused.size, 2)))


def test_feature_loss_zero_when_decoder_exact():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    g = from_edges(x, [(0, 1)], normalize=False)
    dec = init_decoder(2, 2, 0, hidden=2)
    dec.w2.data[:] = 0.0
    dec.b2.data[:] = 0.0
    g2 = from_edges(np.zeros((2, 2)), [(0, 1)], normalize=False)
    assert feature_loss(g2, T.Tensor(x), dec).item() == 0.0
    assert feature_loss(g, T.Tensor(x), dec).item() == pytest.approx((1 + 4 + 9 + 16) / 2)


def test_dense_link_loss_orthogonal_large_rows_on_complete_graph():
    n = 4
    edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
    g = from_edges(np.ones((n, 1)), edges)
    z = T.Tensor(50.0 * np.eye(n))
    assert dense_link_loss(g, z).item() == pytest.approx(0.25, abs=1e-12)


def test_dense_equals_sampled_with_all_pairs():
    g = generate_sbm(SbmSpec(blocks=2, nodes_per_block=10, p_in=0.4, p_out=0.05, feature_dim=3, seed=5))
    z = T.Tensor(np.random.default_rng(0).standard_normal((20, 4)))
    dec = init_decoder(4, 3, 0)
    _, dense = recon_losses(g, z, dec, dense=True)
    _, full = recon_losses(g, z, dec, pairs=all_link_pairs(g))
    assert dense.item() == pytest.approx(full.item(), abs=1e-9)


def test_sampled_pairs_contract(rng):
    g = generate_sbm(SbmSpec(blocks=2, nodes_per_block=10, p_in=0.4, p_out=0.05, seed=1))
    u, v, t = sample_link_pairs(g, 3, rng)
    pos = t == 1
    assert pos.sum() == g.num_edges and (~pos).sum() == 3 * g.num_edges
    assert all(g.has_edge(a, b) for a, b in zip(u[pos], v[pos]))
    assert not any(g.has_edge(a, b) for a, b in zip(u[~pos], v[~pos]))
    with pytest.raises(T.ParameterError):
        sample_link_pairs(g, 0, rng)


def test_perplexity_cases():
    assert perplexity(np.zeros(10, dtype=np.int64), 4) == 1.0
    assert perplexity(np.arange(512), 512) == pytest.approx(512, abs=1e-9)
    assert perplexity(np.array([0.5, 0.5, 0.0, 0.0])) == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(ValueError):
        perplexity(np.array([], dtype=np.int64), 3)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=80))
def test_perplexity_bounds(idx):
    a = Assignment(np.array(idx), 10)
    p = perplexity(a)
    assert 1.0 - 1e-12 <= p <= active_codes(a) + 1e-9 <= 10 + 1e-9


def test_kmeans_n_equals_k():
    x = np.random.default_rng(0).standard_normal((5, 2))
    cents, labels, hist = kmeans(x, 5, seed=0)
    assert hist[-1] == pytest.approx(0.0, abs=1e-24)
    assert sorted(map(tuple, cents)) == sorted(map(tuple, x))


def test_kmeans_recovers_blob_means():
    rng = np.random.default_rng(1)
    a = rng.normal([0, 0], 0.1, (100, 2))
    b = rng.normal([5, 5], 0.1, (100, 2))
    cents, _, _ = kmeans(np.vstack([a, b]), 2, seed=0)
    cents = cents[np.argsort(cents[:, 0])]
    assert np.abs(cents - np.array([a.mean(0), b.mean(0)])).max() < 0.1


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), K=st.integers(1, 8))
def test_kmeans_inertia_non_increasing(seed, K):
    x = np.random.default_rng(seed).standard_normal((30, 3))
    _, _, hist = kmeans(x, K, iters=15, seed=seed)
    assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))


def test_kmeans_errors_and_init():
    with pytest.raises(ValueError):
        kmeans(np.ones((2, 2)), 3)
    cb = kmeans_init(np.random.default_rng(0).standard_normal((20, 3)), 4, seed=0, similarity="cosine")
    assert cb.K == 4 and cb.similarity == "cosine" and cb.entries.requires_grad


def test_ortho_penalty_cases(rng):
    assert ortho_penalty(cb_of(np.eye(3))).item() == pytest.approx(0.0, abs=1e-24)
    assert ortho_penalty(cb_of([[1.0, 0.0], [1.0, 0.0]])).item() == pytest.approx(2.0)
    with pytest.warns(RuntimeWarning):
        val = ortho_penalty(cb_of([[0.0, 0.0], [1.0, 0.0]])).item()
    assert val == pytest.approx(0.0, abs=1e-24)
    assert T.finite_diff_check(lambda c: ortho_penalty(Codebook(c)), rng.standard_normal((4, 3))) < 1e-4


def test_zero_variance_embeddings_collapse():
    h = T.Tensor(np.ones((10, 2)))
    cb = cb_of(np.random.default_rng(0).standard_normal((5, 2)))
    assert perplexity(nearest_assign(h, cb)) == 1.0
