"""Message-passing encoder and the MLP feature decoder."""

from dataclasses import dataclass, field

import numpy as np

from gvqlab import tensor as T


@dataclass
class Layer:
    w_self: T.Tensor
    w_neigh: T.Tensor
    bias: T.Tensor

    @property
    def in_dim(self):
        return self.w_self.rows

    @property
    def out_dim(self):
        return self.w_self.cols


@dataclass
class EncoderParams:
    """Per-layer root / neighbour weights plus bias.

    Layer ``l`` computes ``act(h W_self + AGG_{u in N(v)} h_u W_neigh + b)``.
    """

    layers: list
    aggregator: str = "mean"
    activation: str = "elu"

    def __post_init__(self):
        for i in range(1, len(self.layers)):
            if self.layers[i].in_dim != self.layers[i - 1].out_dim:
                raise T.DimensionError(
                    f"layer {i} expects input dim {self.layers[i].in_dim}, "
                    f"layer {i - 1} outputs {self.layers[i - 1].out_dim}"
                )

    @property
    def depth(self):
        return len(self.layers)

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def named_tensors(self):
        out = []
        for i, layer in enumerate(self.layers):
            out += [(f"enc.{i}.w_self", layer.w_self), (f"enc.{i}.w_neigh", layer.w_neigh), (f"enc.{i}.bias", layer.bias)]
        return out

    def tensors(self):
        return [t for _, t in self.named_tensors()]


@dataclass
class DecoderParams:
    """Two-layer perceptron d -> hidden -> f."""

    w1: T.Tensor
    b1: T.Tensor
    w2: T.Tensor
    b2: T.Tensor
    activation: str = field(default="elu")

    def named_tensors(self):
        return [("dec.w1", self.w1), ("dec.b1", self.b1), ("dec.w2", self.w2), ("dec.b2", self.b2)]

    def tensors(self):
        return [t for _, t in self.named_tensors()]


def glorot(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(dims, seed, aggregator="mean", activation="elu"):
    """Encoder with ``len(dims) - 1`` layers mapping dims[0] -> ... -> dims[-1]."""
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"need at least two positive dims, got {dims}")
    rng = np.random.default_rng(seed)
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        layers.append(
            Layer(
                T.Tensor(glorot(rng, d_in, d_out), requires_grad=True),
                T.Tensor(glorot(rng, d_in, d_out), requires_grad=True),
                T.Tensor(np.zeros((1, d_out)), requires_grad=True),
            )
        )
    return EncoderParams(layers, aggregator=aggregator, activation=activation)


def init_decoder(d, f, seed, hidden=None, activation="elu"):
    hidden = hidden or d
    rng = np.random.default_rng(seed)
    return DecoderParams(
        T.Tensor(glorot(rng, d, hidden), requires_grad=True),
        T.Tensor(np.zeros((1, hidden)), requires_grad=True),
        T.Tensor(glorot(rng, hidden, f), requires_grad=True),
        T.Tensor(np.zeros((1, f)), requires_grad=True),
        activation=activation,
    )


def encode(g, p):
    """Node embeddings (n x d) after ``p.depth`` rounds of message passing."""
    h = T.Tensor(g.features)
    for i, layer in enumerate(p.layers):
        if h.cols != layer.in_dim:
            raise T.DimensionError(f"encoder layer {i}: input has {h.cols} columns, weights expect {layer.in_dim}")
        agg = T.csr_aggregate(h, g.indptr, g.indices, p.aggregator)
        pre = T.add_row(T.matmul(h, layer.w_self) + T.matmul(agg, layer.w_neigh), layer.bias)
        h = T.activation(pre, p.activation)
    return h


def decode(z, dec):
    hidden = T.activation(T.add_row(T.matmul(z, dec.w1), dec.b1), dec.activation)
    return T.add_row(T.matmul(hidden, dec.w2), dec.b2)


def copy_encoder(p):
    return EncoderParams(
        [
            Layer(
                T.Tensor(l.w_self.data.copy(), requires_grad=True),
                T.Tensor(l.w_neigh.data.copy(), requires_grad=True),
                T.Tensor(l.bias.data.copy(), requires_grad=True),
            )
            for l in p.layers
        ],
        aggregator=p.aggregator,
        activation=p.activation,
    )


def pretrain_encoder(g, p, epochs, decoder=None, seed=0, lr=1e-3, weight_decay=1e-5,
                     w_feat=100.0, w_link=0.01, neg_samples=5, history=None):
    """Fit encoder (and decoder) on feature + link reconstruction, no quantizer.

    Returns a new :class:`EncoderParams`; the input is left untouched. If
    ``history`` is a list, the loss before each update is appended to it.
    """
    from gvqlab.optim import AdamW
    from gvqlab.vq import recon_losses

    p = copy_encoder(p)
    if epochs <= 0:
        return p
    dec = decoder if decoder is not None else init_decoder(p.out_dim, g.num_features, seed + 1)
    opt = AdamW(p.tensors() + dec.tensors(), lr=lr, weight_decay=weight_decay)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        opt.zero_grad()
        h = encode(g, p)
        feat, link = recon_losses(g, h, dec, neg_samples=neg_samples, rng=rng)
        loss = T.scale(feat, w_feat) + T.scale(link, w_link)
        if history is not None:
            history.append(loss.item())
        T.backward(loss)
        opt.step()
    return p
