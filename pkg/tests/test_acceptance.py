"""Acceptance criteria 1-13, one test each, each printing a PASS/FAIL line."""

import functools
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import record
from gvqlab import tensor as T
from gvqlab.config import TrainConfig
from gvqlab.dynamics import analytic_update_step, codebook_term, coassign_check, redundancy_sweep, sweep_specs
from gvqlab.encoder import encode, init_params
from gvqlab.gradcheck import run_suite
from gvqlab.graph import SbmSpec, generate_sbm
from gvqlab.rgvq import (LossWeights, assignment_logits, build_contrastive_sets, gumbel_softmax, infonce_reg,
                         rgvq_total_loss, soft_quantize)
from gvqlab.train import train
from gvqlab.vq import (Assignment, Codebook, gather_codewords, nearest_assign, perplexity, recon_losses,
                       ste_quantize, vq_aux_losses)

DESK = TrainConfig()
SEEDS5 = (0, 1, 2, 3, 4)
SEEDS3 = (0, 1, 2)


@functools.lru_cache(maxsize=None)
def best(method, seed, **changes):
    t0 = time.perf_counter()
    res = train(DESK.replace(method=method, seed=seed, **changes))
    return res.best_perplexity, time.perf_counter() - t0


def _best(method, seed, **changes):
    return best(method, seed, **changes)[0]


# 1 -----------------------------------------------------------------------------

def test_c01_gradient_fidelity():
    t0 = time.perf_counter()
    checks = [c for seed in range(3) for c in run_suite(seed)]
    elapsed = time.perf_counter() - t0
    bad = [f"{c.name}={c.error:.2e}" for c in checks if not c.ok]
    op_worst = max(c.error for c in checks if not c.name.startswith("composite"))
    comp_worst = max(c.error for c in checks if c.name.startswith("composite"))
    ok = not bad and elapsed < 30
    record(1, ok, f"{len(checks)} checks over 3 seeds, worst op {op_worst:.1e} (<1e-4), "
                  f"worst composite {comp_worst:.1e} (<1e-3), {elapsed:.1f}s")
    assert ok, bad


# 2 -----------------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 12), d=st.integers(1, 6), K=st.integers(1, 8), seed=st.integers(0, 2**31))
def _ste_property(n, d, K, seed):
    rng = np.random.default_rng(seed)
    h = T.Tensor(rng.standard_normal((n, d)), requires_grad=True)
    cb = Codebook(T.Tensor(rng.standard_normal((K, d)), requires_grad=True))
    a = nearest_assign(h, cb)
    w = rng.standard_normal((n, d))
    z = ste_quantize(h, cb, a)
    T.backward(T.sum(T.mul(z, T.Tensor(w))))
    assert np.array_equal(z.data, cb.entries.data[a.index])
    assert np.array_equal(h.grad, w)
    assert np.array_equal(cb.entries.grad, np.zeros((K, d)))


def test_c02_ste_contract():
    try:
        _ste_property()
        ok, detail = True, "dL/dh == upstream exactly and dL/dC == 0 exactly over 40 random shapes"
    except AssertionError as exc:
        ok, detail = False, f"mismatch: {exc}"
    record(2, ok, detail)
    assert ok


# 3 -----------------------------------------------------------------------------

def test_c03_update_rule_equivalence():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        K, d, n = int(rng.integers(2, 10)), int(rng.integers(1, 8)), int(rng.integers(1, 40))
        cb = Codebook(T.Tensor(rng.standard_normal((K, d)), requires_grad=True))
        h = T.Tensor(rng.standard_normal((n, d)), requires_grad=True)
        a = Assignment(rng.integers(0, K, n), K)
        eta = float(rng.uniform(0.01, 0.9))
        T.backward(codebook_term(h, cb, a))
        autodiff = cb.entries.data - eta * cb.entries.grad
        worst = max(worst, float(np.abs(analytic_update_step(cb.entries.data, h, a, eta) - autodiff).max()))
    ok = worst <= 1e-10
    record(3, ok, f"20 random instances, max |analytic - autodiff| = {worst:.1e} (<= 1e-10)")
    assert ok


# 4 -----------------------------------------------------------------------------

def _toy_instance(seed):
    g = generate_sbm(SbmSpec(blocks=3, nodes_per_block=8, feature_dim=6, seed=seed))
    enc = init_params([6, 8, 8], seed)
    from gvqlab.encoder import init_decoder

    dec = init_decoder(8, 6, seed + 1)
    return g, enc, dec


def test_c04_dead_rows_and_soft_assignment():
    no_ortho = LossWeights(ortho=0.0)
    dead_ok, soft_ok, dead_rows, min_soft = True, True, 0, np.inf
    for seed in range(10):
        g, enc, dec = _toy_instance(seed)
        rng = np.random.default_rng(seed)
        # hard path: 12 codes for 24 nodes leaves some codes unselected
        h = encode(g, enc)
        cb = Codebook(T.Tensor(h.data[rng.choice(g.n, 12, replace=False)] + 0.3 * rng.standard_normal((12, 8)),
                               requires_grad=True))
        a = nearest_assign(h, cb)
        z = ste_quantize(h, cb, a)
        vocab, commit = vq_aux_losses(h, gather_codewords(cb, a), reduction="mean")
        feat, link = recon_losses(g, z, dec, rng=np.random.default_rng(seed))
        T.backward(rgvq_total_loss({"feat": feat, "link": link, "vocab": vocab, "commit": commit}, no_ortho))
        unused = np.flatnonzero(a.counts() == 0)
        dead_rows += unused.size
        dead_ok &= bool(np.all(cb.entries.grad[unused] == 0.0))
        # soft path at tau = 0.1 with every probability positive
        h = encode(g, enc)
        cb2 = Codebook(T.Tensor(cb.entries.data.copy(), requires_grad=True))
        dist = gumbel_softmax(assignment_logits(h, cb2), 0.1, seed)
        if dist.probs.data.min() <= 0:
            soft_ok = False
            continue
        zs = soft_quantize(dist, cb2)
        vocab, commit = vq_aux_losses(h, zs, reduction="mean")
        feat, link = recon_losses(g, zs, dec, rng=np.random.default_rng(seed))
        sets = build_contrastive_sets(g, k_c=5, M=10, seed=seed)
        reg = infonce_reg(dist, sets)
        T.backward(rgvq_total_loss({"feat": feat, "link": link, "vocab": vocab, "commit": commit, "reg": reg},
                                   no_ortho))
        norms = np.linalg.norm(cb2.entries.grad, axis=1)
        min_soft = min(min_soft, float(norms.min()))
        soft_ok &= bool(np.all(norms > 0))
    ok = dead_ok and soft_ok and dead_rows > 0
    record(4, ok, f"{dead_rows} unselected rows all exactly zero-grad (hard); "
                  f"min codeword grad norm under tau=0.1 soft assignment {min_soft:.1e} > 0")
    assert ok


# 5 -----------------------------------------------------------------------------

def _random_triple(seed):
    rng = np.random.default_rng(seed)
    g = generate_sbm(SbmSpec(blocks=int(rng.integers(2, 6)), nodes_per_block=int(rng.integers(5, 40)),
                             feature_dim=8, p_in=float(rng.uniform(0.2, 0.8)), redundancy=float(rng.uniform(0, 1)),
                             seed=seed))
    enc = init_params([8, 16, 16], seed)
    h = encode(g, enc).data
    K = int(rng.integers(2, 17))
    c = h[rng.choice(g.n, min(K, g.n), replace=False)]
    c = c + 0.1 * h.std() * rng.standard_normal(c.shape)
    return g, enc, Codebook(T.Tensor(c)), h


def test_c05_voronoi_implication():
    total, bad_triples, ball, bound_ok = 0, 0, 0, True
    for seed in range(50):
        g, enc, cb, h = _random_triple(seed)
        assert g.n <= 200
        r = coassign_check(g, enc, cb, h=h)
        total += r["violations"]
        bad_triples += r["violations"] > 0
        ball += r["ball_violations"]
        if r["bound"] > 0:
            bound_ok &= r["bound"] <= r["coassign_rate"]
    ok = total == 0
    record(5, ok, f"{total} pairs with ||h_i-h_j|| <= delta_c split across tokens in {bad_triples}/50 triples "
                  f"(required 0); pairs inside one codeword's delta_c ball split: {ball}; "
                  f"bound <= empirical whenever positive: {bound_ok}")
    assert ball == 0 and bound_ok
    assert ok, "the stated implication does not hold; see the decisions ledger"


# 6 -----------------------------------------------------------------------------

def test_c06_perplexity_closed_forms():
    errs = []
    for K in (1, 2, 7, 64, 512):
        errs.append(abs(perplexity(np.zeros(50, dtype=np.int64), K) - 1.0))
        errs.append(abs(perplexity(np.repeat(np.arange(K), 3), K) - K))
    errs.append(abs(perplexity(np.array([0, 1] * 5), 8) - 2.0))
    errs.append(abs(perplexity(np.full((4, 16), 1 / 16)) - 16.0))
    worst = max(errs)
    ok = worst <= 1e-9
    record(6, ok, f"P=1, P=K, P=2 cases, max abs error {worst:.1e} (<= 1e-9)")
    assert ok


# 7, 8 --------------------------------------------------------------------------

@pytest.mark.slow
def test_c07_collapse_reproduction():
    runs = [best("vanilla", s) for s in SEEDS5]
    vals = [r[0] for r in runs]
    med = float(np.median(vals))
    slowest = max(r[1] for r in runs)
    ok = med <= 0.15 * DESK.K and slowest < 300
    record(7, ok, f"vanilla best perplexity median {med:.2f} over seeds {SEEDS5} "
                  f"({', '.join(f'{v:.2f}' for v in vals)}); limit {0.15 * DESK.K:.1f}; slowest run {slowest:.1f}s")
    assert ok


@pytest.mark.slow
def test_c08_rgvq_improvement():
    van = [_best("vanilla", s) for s in SEEDS5]
    rg = [_best("rgvq", s) for s in SEEDS5]
    ratio = float(np.median(rg) / np.median(van))
    ok = ratio >= 2.0
    record(8, ok, f"median rgvq {np.median(rg):.2f} vs vanilla {np.median(van):.2f}, ratio {ratio:.2f} (>= 2); "
                  f"rgvq per seed {', '.join(f'{v:.2f}' for v in rg)}")
    assert ok


# 9 -----------------------------------------------------------------------------

@pytest.mark.slow
def test_c09_redundancy_and_density_trends():
    pca_signs, deg_signs = [], []
    for seed in SEEDS3:
        base = SbmSpec(seed=seed)
        _, c1 = redundancy_sweep(sweep_specs("redundancy", [0.0, 0.25, 0.5, 0.75, 1.0], base, seed),
                                 DESK.replace(seed=seed))
        _, c2 = redundancy_sweep(sweep_specs("density", [0.1, 0.2, 0.3, 0.4, 0.5], base, seed),
                                 DESK.replace(seed=seed))
        pca_signs.append(c1["pca95"])
        deg_signs.append(c2["avg_degree"])
    pca_pos = sum(1 for r in pca_signs if r is not None and r > 0)
    deg_neg = sum(1 for r in deg_signs if r is not None and r < 0)
    ok = pca_pos >= 2 and deg_neg >= 2
    fmt = lambda xs: ", ".join("undef" if x is None else f"{x:+.2f}" for x in xs)
    record(9, ok, f"Spearman(pca95, P) per seed [{fmt(pca_signs)}] positive in {pca_pos}/3; "
                  f"Spearman(avg degree, P) [{fmt(deg_signs)}] negative in {deg_neg}/3")
    assert ok


# 10, 11 ------------------------------------------------------------------------

@pytest.mark.slow
def test_c10_temperature_direction():
    low = [_best("rgvq", s) for s in SEEDS3]
    high = [_best("rgvq", s, tau=1.0) for s in SEEDS3]
    ok = np.median(low) >= np.median(high)
    record(10, ok, f"median rgvq best perplexity tau=0.1 {np.median(low):.2f} vs tau=1.0 {np.median(high):.2f}")
    assert ok


@pytest.mark.slow
def test_c11_codebook_capacity():
    from gvqlab.train import sweep

    rows = sweep(DESK.replace(method="rgvq"), "codebook-size", [16, 32, 64], seeds=[0])
    top = rows[-1]
    ok = top["normalized_perplexity"] >= 0.5
    record(11, ok, "rgvq P/K by K: " + ", ".join(f"{r['value']}:{r['normalized_perplexity']:.3f}" for r in rows)
           + " (need >= 0.5 at K=64)")
    assert ok


# 12 ----------------------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), blocks=st.integers(2, 5), per=st.integers(4, 40),
       p_in=st.floats(0.1, 0.9), mode=st.sampled_from(["shared", "per_anchor"]), k_c=st.integers(1, 20))
def _predicate_property(seed, blocks, per, p_in, mode, k_c):
    g = generate_sbm(SbmSpec(blocks=blocks, nodes_per_block=per, p_in=p_in, feature_dim=6, seed=seed))
    assert g.n <= 200
    sets = build_contrastive_sets(g, k_c=k_c, M=max(k_c, 30), seed=seed, negative_mode=mode)
    adj = g.dense_adjacency() > 0
    dist = np.linalg.norm(g.features[:, None, :] - g.features[None, :, :], axis=2)
    for v in range(g.n):
        for u in sets.positives[v]:
            assert u != v and (adj[v, u] or dist[v, u] < sets.eps), ("positive", v, u)
        for u in sets.negatives[v]:
            assert u != v and not adj[v, u] and dist[v, u] > sets.gamma, ("negative", v, u)
        assert len(sets.positives[v]) <= k_c and len(sets.negatives[v]) <= k_c


def test_c12_contrastive_predicates():
    try:
        _predicate_property()
        ok, detail = True, "all emitted positives/negatives satisfy their predicates on 25 random graphs (n <= 200)"
    except AssertionError as exc:
        ok, detail = False, f"predicate violation {exc}"
    record(12, ok, detail)
    assert ok


# 13 ----------------------------------------------------------------------------

@pytest.mark.slow
def test_c13_determinism(tmp_path):
    same = []
    for method in ("vanilla", "rgvq"):
        cfg = DESK.replace(method=method, seed=7)
        train(cfg, out_dir=tmp_path / f"{method}a")
        train(cfg, out_dir=tmp_path / f"{method}b")
        a = (tmp_path / f"{method}a" / "metrics.jsonl").read_bytes()
        b = (tmp_path / f"{method}b" / "metrics.jsonl").read_bytes()
        same.append(a == b and len(a) > 0)
    ok = all(same)
    record(13, ok, f"metrics.jsonl byte-identical across two runs: vanilla {same[0]}, rgvq {same[1]}")
    assert ok
