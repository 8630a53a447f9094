"""Finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, record_branches


@dataclass
class GradCheckResult:
    error: float
    probed: int
    crossings: int  # probes whose perturbation moved some piecewise op to another branch

    def __float__(self):
        return self.error


def grad_check_detail(fn, inputs, fd_step=1e-3, max_entries=None, seed=0, freeze_branches=True) -> GradCheckResult:
    """Like :func:`grad_check` but also reports how many probes crossed a kink."""
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with record_branches() as base:
        out = fn()
    if out.size != 1:
        raise ValueError("grad_check needs a scalar output")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    rng = np.random.default_rng(seed)
    worst, probed, crossings = 0.0, 0, 0
    replay = base if freeze_branches else None
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + fd_step
            with record_branches(replay) as kp:
                fp = float(fn().data)
            flat[i] = old - fd_step
            with record_branches(replay) as km:
                fm = float(fn().data)
            flat[i] = old
            crossings += not (kp.same_as(base) and km.same_as(base))
            num[j] = (fp - fm) / (2 * fd_step)
        ana = a.reshape(-1)[idx]
        probed += len(idx)
        scale = max(np.abs(num).max(), np.abs(ana).max(), 1e-12)
        worst = max(worst, float(np.abs(ana - num).max() / scale))
    return GradCheckResult(worst, probed, crossings)


def grad_check(fn, inputs, fd_step=1e-3, max_entries=None, seed=0, freeze_branches=True) -> float:
    """Largest relative gradient error of the scalar ``fn()`` over ``inputs``.

    Every tensor in ``inputs`` is perturbed in place by ``+-fd_step`` and the
    central difference compared with the gradient from one backward pass. The
    error of each tensor is ``max|analytic - numeric| / max|numeric|``, so
    entries with vanishing gradients are judged against the tensor's
    gradient scale. ``max_entries`` caps the entries probed per tensor (picked
    at random).

    With ``freeze_branches`` every perturbed evaluation keeps the leaky ReLU,
    abs and clamp branches of the unperturbed one. The central difference then
    measures the slope of the linear piece the analytic gradient belongs to,
    instead of averaging across a kink that a step of ``fd_step`` happens to
    straddle.
    """
    return grad_check_detail(fn, inputs, fd_step, max_entries, seed, freeze_branches).error


def as_leaf(x, dtype=np.float64) -> Tensor:
    return Tensor(np.array(x, dtype=dtype), requires_grad=True)
