"""Adam and the step learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class TrainingError(RuntimeError):
    pass


def lr_at(epoch: int, base=5e-4, decay=0.1, every=2) -> float:
    """Learning rate for a zero-based epoch index: ``base * decay**(epoch // every)``."""
    return base * decay ** (epoch // every)


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8, names=None):
    """In-place Adam update of numpy arrays ``params`` given ``grads``.

    ``None`` gradients count as zero. Raises :class:`TrainingError` before
    touching anything if a gradient is not finite.
    """
    for i, g in enumerate(grads):
        if g is not None and not np.all(np.isfinite(g)):
            label = names[i] if names else f"#{i}"
            bad = int(np.size(g) - np.isfinite(g).sum())
            raise TrainingError(f"non-finite gradient in parameter {label} ({bad} entries) at step {state.t + 1}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    return params, state


class Adam:
    def __init__(self, tensors, beta1=0.9, beta2=0.999, eps=1e-8):
        self.tensors = list(tensors)
        self.betas = (beta1, beta2)
        self.eps = eps
        self.state = AdamState()

    def step(self, lr):
        params = [t.data for t in self.tensors]
        grads = [t.grad for t in self.tensors]
        names = [t.name or f"#{i}" for i, t in enumerate(self.tensors)]
        adam_step(params, grads, self.state, lr, *self.betas, self.eps, names)

    def zero_grad(self):
        for t in self.tensors:
            t.grad = None
