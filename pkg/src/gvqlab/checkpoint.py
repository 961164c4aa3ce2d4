"""Versioned JSON checkpoints: a list of named matrices with shapes."""

import json
from pathlib import Path

import numpy as np

from gvqlab import tensor as T
from gvqlab.encoder import DecoderParams, EncoderParams, Layer
from gvqlab.vq import Codebook

FORMAT = "gvqlab-params"
VERSION = 1


def _pack(named, meta):
    return {
        "format": FORMAT,
        "version": VERSION,
        "meta": meta,
        "tensors": [{"name": name, "shape": list(t.shape), "data": t.data.ravel().tolist()} for name, t in named],
    }


def _unpack(doc):
    if doc.get("format") != FORMAT:
        raise ValueError(f"not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    out = {}
    for entry in doc["tensors"]:
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        out[entry["name"]] = T.Tensor(arr, requires_grad=True)
    return out, doc.get("meta", {})


def save_encoder(path, enc, dec=None):
    named = enc.named_tensors() + (dec.named_tensors() if dec is not None else [])
    meta = {"aggregator": enc.aggregator, "activation": enc.activation, "layers": enc.depth,
            "decoder_activation": dec.activation if dec is not None else None}
    Path(path).write_text(json.dumps(_pack(named, meta)))


def load_encoder(path):
    """Returns ``(EncoderParams, DecoderParams or None)``."""
    tensors, meta = _unpack(json.loads(Path(path).read_text()))
    layers = [Layer(tensors[f"enc.{i}.w_self"], tensors[f"enc.{i}.w_neigh"], tensors[f"enc.{i}.bias"])
              for i in range(meta["layers"])]
    enc = EncoderParams(layers, aggregator=meta["aggregator"], activation=meta["activation"])
    dec = None
    if "dec.w1" in tensors:
        dec = DecoderParams(tensors["dec.w1"], tensors["dec.b1"], tensors["dec.w2"], tensors["dec.b2"],
                            activation=meta.get("decoder_activation") or "elu")
    return enc, dec


def save_codebook(path, cb):
    meta = {"K": cb.K, "d": cb.dim, "similarity": cb.similarity, "ortho_weight": cb.ortho_weight}
    Path(path).write_text(json.dumps(_pack([("codebook", cb.entries)], meta)))


def load_codebook(path):
    tensors, meta = _unpack(json.loads(Path(path).read_text()))
    entries = tensors["codebook"]
    if entries.shape != (meta["K"], meta["d"]):
        raise ValueError("codebook shape does not match its header")
    return Codebook(entries, similarity=meta["similarity"], ortho_weight=meta.get("ortho_weight", 0.0))
