"""Joint training loop, sweeps and dataset statistics."""

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gvqlab import checkpoint
from gvqlab import tensor as T
from gvqlab.encoder import encode, init_decoder, init_params, pretrain_encoder
from gvqlab.graph import avg_degree, pca95
from gvqlab.mitigation import (AffineParams, EmaState, SimVQParams, UsageHistory, affine_adapt, codebook_reset,
                               ema_update, simvq_codebook)
from gvqlab.optim import AdamW
from gvqlab.rgvq import (assignment_logits, build_contrastive_sets, gumbel_softmax, infer_hard_assign, infonce_reg,
                         load_or_build_sets, rgvq_total_loss, soft_quantize)
from gvqlab.vq import (active_codes, gather_codewords, kmeans_init, nearest_assign, ortho_penalty, perplexity,
                       random_init, recon_losses, ste_quantize, vq_aux_losses)

METRIC_KEYS = ("link", "feat", "reg", "commit", "vocab", "ortho")
SWEEP_AXES = {"codebook-size": "K", "temperature": "tau", "contrastive-k": "k_c"}


class NumericAbort(RuntimeError):
    """Raised when a loss goes non-finite; carries the last finite record."""

    def __init__(self, message, last_record=None, epoch=None):
        super().__init__(message)
        self.last_record = last_record
        self.epoch = epoch


@dataclass
class TrainResult:
    records: list
    best_perplexity: float
    final_perplexity: float
    hook_counts: dict
    encoder: object = None
    decoder: object = None
    codebook: object = None
    sets: object = None
    timings: list = field(default_factory=list)

    def summary(self):
        best_epoch = max(self.records, key=lambda r: r["perplexity"])["epoch"]
        return {
            "best_perplexity": self.best_perplexity,
            "best_epoch": best_epoch,
            "final_perplexity": self.final_perplexity,
            "final_active_codes": self.records[-1]["active_codes"],
            "K": self.codebook.K,
            "epochs": len(self.records),
            "hook_counts": dict(self.hook_counts),
        }


def _codebook_for(state):
    if state["simvq"] is not None:
        return simvq_codebook(state["simvq"], state["similarity"])
    return state["codebook"]


def _embed(g, state):
    h = encode(g, state["encoder"])
    if state["affine"] is not None:
        h = affine_adapt(h, state["affine"].scale, state["affine"].shift)
    return h


def _hard_assign(h, cb, method):
    return infer_hard_assign(h, cb) if method == "rgvq" else nearest_assign(h, cb)


def train(config, out_dir=None, graph=None, sets=None, hooks=None):
    """Train one configuration; returns a :class:`TrainResult`.

    Full batch, one optimizer step per epoch. Perplexity is measured on a
    hard-assignment pass after the step and the mitigation hooks. ``hooks``
    may map ``"ema"``/``"reset"`` to callables invoked with the epoch each
    time that hook fires.
    """
    cfg = config
    g = graph if graph is not None else cfg.load_graph()
    mit = cfg.mitigation_config()
    weights = cfg.loss_weights()
    hooks = hooks or {}

    encoder = init_params([g.num_features] + [cfg.hidden_dim] * cfg.layers, cfg.seed, cfg.aggregator, cfg.activation)
    decoder = init_decoder(cfg.hidden_dim, g.num_features, cfg.seed + 1)
    if mit.kind == "pretrain":
        encoder = pretrain_encoder(g, encoder, mit.pretrain_epochs, decoder=decoder, seed=cfg.seed, lr=cfg.lr,
                                   weight_decay=cfg.weight_decay, w_feat=cfg.w_feat, w_link=cfg.w_link,
                                   neg_samples=cfg.neg_samples)

    h0 = encode(g, encoder).data
    if cfg.codebook_init == "kmeans":
        codebook = kmeans_init(h0, cfg.K, cfg.kmeans_iters, cfg.seed, cfg.similarity)
    else:
        codebook = random_init(cfg.K, cfg.hidden_dim, cfg.seed, float(h0.std()) or 1.0, cfg.similarity)

    state = {
        "encoder": encoder,
        "codebook": codebook,
        "similarity": cfg.similarity,
        "affine": AffineParams.identity(cfg.hidden_dim) if mit.kind == "affine" else None,
        "simvq": SimVQParams.from_codebook(codebook) if mit.kind == "simvq" else None,
    }
    trainable = encoder.tensors() + decoder.tensors()
    if state["affine"] is not None:
        trainable += state["affine"].tensors()
    if state["simvq"] is not None:
        trainable += state["simvq"].tensors()
    elif mit.kind != "ema":
        trainable.append(codebook.entries)
    opt = AdamW(trainable, lr=cfg.lr, weight_decay=cfg.weight_decay, betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps)

    if cfg.method == "rgvq" and sets is None:
        kw = dict(k_c=cfg.k_c, eps_quantile=cfg.eps_quantile, gamma_quantile=cfg.gamma_quantile, M=cfg.M,
                  seed=cfg.seed, negative_mode=cfg.negative_mode)
        sets = load_or_build_sets(g, cfg.sets_dir, **kw) if cfg.sets_dir else build_contrastive_sets(g, **kw)

    ema_state = EmaState.from_codebook(codebook) if mit.kind == "ema" else None
    usage = UsageHistory(cfg.K)
    hook_counts = {"ema": 0, "reset": 0, "reset_codes": 0}
    use_ortho = weights.ortho > 0 and mit.kind != "ema"
    records, timings = [], []
    last_finite = None

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        rng = np.random.default_rng([cfg.seed, epoch])
        opt.zero_grad()
        h = _embed(g, state)
        cb = _codebook_for(state)
        parts = {}
        if cfg.method == "rgvq":
            dist = gumbel_softmax(assignment_logits(h, cb), cfg.tau, rng)
            z = soft_quantize(dist, cb)
            parts["vocab"], parts["commit"] = vq_aux_losses(h, z, beta=1.0, reduction="mean")
            parts["reg"] = infonce_reg(dist, sets, cfg.sim_temperature, cfg.reg_reduction)
            train_assign = _hard_assign(h, cb, "rgvq")
        else:
            train_assign = nearest_assign(h, cb)
            z = ste_quantize(h, cb, train_assign)
            vocab, commit = vq_aux_losses(h, gather_codewords(cb, train_assign), beta=1.0, reduction="mean")
            parts["commit"] = commit
            if mit.kind != "ema":
                parts["vocab"] = vocab
        parts["feat"], parts["link"] = recon_losses(g, z, decoder, cfg.neg_samples, rng, dense=cfg.dense_link)
        if use_ortho:
            parts["ortho"] = ortho_penalty(cb)

        values = {k: parts[k].item() for k in parts}
        bad = [k for k, v in values.items() if not math.isfinite(v)]
        if bad:
            raise NumericAbort(f"non-finite loss component(s) {bad} at epoch {epoch}", last_finite, epoch)
        total = rgvq_total_loss(parts, weights)
        T.backward(total)
        for t in trainable:
            if t.grad is not None and not np.all(np.isfinite(t.grad)):
                raise NumericAbort(f"non-finite gradient at epoch {epoch}", last_finite, epoch)
        opt.step()

        if mit.kind == "ema":
            ema_state = ema_update(codebook, h, train_assign, mit.ema_decay, ema_state)
            hook_counts["ema"] += 1
            if "ema" in hooks:
                hooks["ema"](epoch)
        usage.append(train_assign.counts())
        if mit.kind == "reset":
            replaced = codebook_reset(codebook, usage, h, mit.dead_threshold, [cfg.seed, epoch, 1])
            if replaced.size:
                hook_counts["reset"] += 1
                hook_counts["reset_codes"] += int(replaced.size)
                if "reset" in hooks:
                    hooks["reset"](epoch)

        eval_assign = _hard_assign(_embed(g, state).data, _codebook_for(state), cfg.method)
        rec = {"epoch": epoch}
        rec.update({k: values.get(k) for k in METRIC_KEYS})
        rec["total"] = total.item()
        rec["perplexity"] = perplexity(eval_assign)
        rec["active_codes"] = active_codes(eval_assign)
        records.append(rec)
        timings.append({"epoch": epoch, "wall_time": time.perf_counter() - t0})
        last_finite = rec

    result = TrainResult(
        records=records,
        best_perplexity=max(r["perplexity"] for r in records),
        final_perplexity=records[-1]["perplexity"],
        hook_counts=hook_counts,
        encoder=state["encoder"],
        decoder=decoder,
        codebook=_codebook_for(state),
        sets=sets,
        timings=timings,
    )
    if out_dir is not None:
        write_outputs(result, cfg, out_dir)
    return result


def write_outputs(result, cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.jsonl", "w") as fh:
        for rec in result.records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(out / "timing.jsonl", "w") as fh:
        for rec in result.timings:
            fh.write(json.dumps(rec) + "\n")
    (out / "summary.json").write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    checkpoint.save_encoder(out / "encoder.json", result.encoder, result.decoder)
    checkpoint.save_codebook(out / "codebook.json", result.codebook)


def write_abort_dump(exc, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump = {"error": str(exc), "epoch": exc.epoch, "last_finite_record": exc.last_record}
    (out / "abort.json").write_text(json.dumps(dump, indent=2) + "\n")


def sweep(config, axis, values, out_csv=None, seeds=None):
    """Train once per value (and seed); rows are (value, seed, best P, P/K).

    When several seeds are given an extra row per value with ``seed="median"``
    carries the median.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    field_name = SWEEP_AXES[axis]
    seeds = list(seeds) if seeds else [config.seed]
    rows = []
    for value in values:
        best = []
        for seed in seeds:
            cfg = config.replace(**{field_name: value, "seed": seed})
            res = train(cfg)
            best.append(res.best_perplexity)
            rows.append({"value": value, "seed": seed, "best_perplexity": res.best_perplexity,
                         "normalized_perplexity": res.best_perplexity / cfg.K})
        if len(seeds) > 1:
            med = float(np.median(best))
            K = value if field_name == "K" else config.K
            rows.append({"value": value, "seed": "median", "best_perplexity": med, "normalized_perplexity": med / K})
    if out_csv is not None:
        Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
        with open(out_csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["value", "seed", "best_perplexity", "normalized_perplexity"])
            writer.writeheader()
            writer.writerows(rows)
    return rows


def stats(g):
    """(n, |E|, average degree, pca95) of a graph."""
    return {"n": g.n, "edges": g.num_edges, "avg_degree": avg_degree(g), "pca95": pca95(g.features)}
