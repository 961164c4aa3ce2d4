"""AdamW with decoupled weight decay."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adamw_step(params, grads, state, lr=1e-4, weight_decay=1e-5, beta1=0.9, beta2=0.999, eps=1e-8):
    """One in-place AdamW update of the arrays in ``params``.

    Missing gradients (``None``) count as zero. Weight decay is applied to the
    parameter before the bias-corrected Adam step, as in Loshchilov & Hutter.
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        if weight_decay:
            p -= lr * weight_decay * p
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


class AdamW:
    """Optimizer over a fixed list of :class:`~gvqlab.tensor.Tensor` leaves."""

    def __init__(self, tensors, lr=1e-4, weight_decay=1e-5, betas=(0.9, 0.999), eps=1e-8):
        self.tensors = list(tensors)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self):
        for t in self.tensors:
            t.grad = None

    def step(self):
        adamw_step(
            [t.data for t in self.tensors],
            [t.grad for t in self.tensors],
            self.state,
            lr=self.lr,
            weight_decay=self.weight_decay,
            beta1=self.betas[0],
            beta2=self.betas[1],
            eps=self.eps,
        )
