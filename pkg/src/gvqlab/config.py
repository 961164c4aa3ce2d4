"""Experiment configuration: a flat dataclass with an INI file form.

File layout (version 1)::

    [meta]
    version = 1
    [data]
    edges = path/to/edges.txt      ; omit to use the synthetic SBM below
    sbm_blocks = 6
    ...

Every field lives in exactly one section (see ``SECTIONS``). Unknown keys
are rejected so typos surface as config errors.
"""

import configparser
import dataclasses
from dataclasses import dataclass, fields
from typing import Optional, Union, get_args, get_origin

from gvqlab.graph import SbmSpec, generate_sbm, load_graph
from gvqlab.mitigation import MitigationConfig
from gvqlab.rgvq import LossWeights

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    # data
    edges: Optional[str] = None
    features: Optional[str] = None
    labels: Optional[str] = None
    normalize_features: bool = True
    sbm_blocks: int = 6
    sbm_nodes_per_block: int = 50
    sbm_p_in: float = 0.5
    sbm_p_out: float = 0.01
    sbm_feature_dim: int = 32
    sbm_redundancy: float = 0.9
    sbm_seed: Optional[int] = None
    # model
    hidden_dim: int = 64
    layers: int = 4
    aggregator: str = "mean"
    activation: str = "elu"
    # quantizer
    method: str = "vanilla"
    K: int = 64
    similarity: str = "euclidean"
    codebook_init: str = "kmeans"
    kmeans_iters: int = 20
    # mitigation
    mitigation: str = "none"
    ema_decay: float = 0.9
    dead_threshold: int = 10
    pretrain_epochs: int = 50
    # rgvq
    tau: float = 0.1
    k_c: int = 20
    M: int = 100
    eps_quantile: float = 0.1
    gamma_quantile: float = 0.9
    sim_temperature: float = 0.5
    negative_mode: str = "shared"
    reg_reduction: str = "mean"
    sets_dir: Optional[str] = None
    # loss
    w_link: float = 0.01
    w_feat: float = 100.0
    w_reg: float = 1.0
    w_commit: float = 0.1
    w_vocab: float = 0.9
    w_ortho: float = 0.1
    neg_samples: int = 5
    dense_link: bool = False
    # optimizer
    lr: float = 5e-3
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # schedule
    epochs: int = 100
    seed: int = 0
    report_every: int = 1

    def __post_init__(self):
        problems = []
        if self.method not in ("vanilla", "rgvq"):
            problems.append(f"method must be vanilla or rgvq, got {self.method!r}")
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if not self.lr > 0:
            problems.append("lr must be > 0")
        if self.K < 1 or self.hidden_dim < 1 or self.layers < 1:
            problems.append("K, hidden_dim and layers must be >= 1")
        if not self.tau > 0:
            problems.append("tau must be > 0")
        if self.codebook_init not in ("kmeans", "random"):
            problems.append(f"codebook_init must be kmeans or random, got {self.codebook_init!r}")
        if (self.edges is None) != (self.features is None):
            problems.append("edges and features must be given together")
        if self.report_every < 1:
            problems.append("report_every must be >= 1")
        try:
            self.loss_weights()
            self.mitigation_config()
        except ValueError as exc:
            problems.append(str(exc))
        if problems:
            raise ConfigError("; ".join(problems))

    def loss_weights(self):
        return LossWeights(self.w_link, self.w_feat, self.w_reg, self.w_commit, self.w_vocab, self.w_ortho)

    def mitigation_config(self):
        return MitigationConfig(self.mitigation, self.ema_decay, self.dead_threshold, self.pretrain_epochs)

    def sbm_spec(self):
        return SbmSpec(self.sbm_blocks, self.sbm_nodes_per_block, self.sbm_p_in, self.sbm_p_out,
                       self.sbm_feature_dim, self.sbm_redundancy,
                       self.seed if self.sbm_seed is None else self.sbm_seed, self.normalize_features)

    def load_graph(self):
        if self.edges is not None:
            return load_graph(self.edges, self.features, self.labels, normalize=self.normalize_features)
        return generate_sbm(self.sbm_spec())

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)


SECTIONS = {
    "data": ["edges", "features", "labels", "normalize_features", "sbm_blocks", "sbm_nodes_per_block", "sbm_p_in",
             "sbm_p_out", "sbm_feature_dim", "sbm_redundancy", "sbm_seed"],
    "model": ["hidden_dim", "layers", "aggregator", "activation"],
    "quantizer": ["method", "K", "similarity", "codebook_init", "kmeans_iters"],
    "mitigation": ["mitigation", "ema_decay", "dead_threshold", "pretrain_epochs"],
    "rgvq": ["tau", "k_c", "M", "eps_quantile", "gamma_quantile", "sim_temperature", "negative_mode",
             "reg_reduction", "sets_dir"],
    "loss": ["w_link", "w_feat", "w_reg", "w_commit", "w_vocab", "w_ortho", "neg_samples", "dense_link"],
    "optimizer": ["lr", "weight_decay", "beta1", "beta2", "adam_eps"],
    "train": ["epochs", "seed", "report_every"],
}

PRESETS = {
    "desk": {},
    # hidden 256, K=512 and the optimizer settings used for the full-size runs
    "full": {"hidden_dim": 256, "K": 512, "lr": 1e-4, "weight_decay": 1e-5, "epochs": 100},
}

_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(name, raw):
    typ = _FIELD_TYPES[name]
    optional = get_origin(typ) is Union
    if optional:
        typ = next(a for a in get_args(typ) if a is not type(None))
    text = raw.strip()
    if optional and text.lower() in ("", "none"):
        return None
    try:
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {typ.__name__}") from None
    return text


def coerce_overrides(pairs):
    """Parse ``{field: string}`` overrides (CLI flags) into typed values."""
    out = {}
    for name, raw in pairs.items():
        if name not in _FIELD_TYPES:
            raise ConfigError(f"unknown config field {name!r}")
        out[name] = raw if not isinstance(raw, str) else _coerce(name, raw)
    return out


def read_config(path, base=None, **overrides):
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    version = parser.get("meta", "version", fallback=str(CONFIG_VERSION))
    if int(version) != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version}")
    values = {}
    for section in parser.sections():
        if section == "meta":
            continue
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[key] = _coerce(key, raw)
    values.update(overrides)
    base = base or TrainConfig()
    return base.replace(**values)


def write_config(cfg, path):
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser["meta"] = {"version": str(CONFIG_VERSION)}
    d = cfg.to_dict()
    for section, keys in SECTIONS.items():
        parser[section] = {k: ("none" if d[k] is None else str(d[k])) for k in keys}
    with open(path, "w") as fh:
        parser.write(fh)


def preset(name, **overrides):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return TrainConfig(**{**PRESETS[name], **overrides})
