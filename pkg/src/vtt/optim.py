"""Adam optimizer over named parameter dicts."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


class AdamState:
    """Per-parameter first/second moment accumulators plus step count.

    Moments are zero-initialized and shape-matched to the parameters they
    track; the update applies the standard bias correction.  `weight_decay`
    is decoupled (applied directly to the parameters, not the moments).
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, params: dict[str, Tensor]):
        """Update from each parameter's accumulated .grad (missing grad = zero)."""
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                 for k, p in params.items()}
        adam_step(params, grads, self)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState):
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=p.data.dtype)
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter '{name}' shape {p.data.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / bc1
        vhat = v / bc2
        update = state.lr * mhat / (np.sqrt(vhat) + state.eps)
        if state.weight_decay:
            update = update + state.lr * state.weight_decay * p.data
        p.data = p.data - update.astype(p.data.dtype)
