"""Training losses on (N, C, H, W) tensors."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor

BCE_EPS = 1e-7


class LossShapeError(ValueError):
    pass


def _check(pred, target):
    ts = np.shape(getattr(target, "data", target))
    if pred.shape != ts:
        raise LossShapeError(f"prediction {pred.shape} vs target {ts}")


def loss_bce(pred: Tensor, target, eps=BCE_EPS) -> Tensor:
    """Mean pixel-wise binary cross-entropy with predictions clamped to [eps, 1 - eps]."""
    _check(pred, target)
    y = np.asarray(getattr(target, "data", target), dtype=pred.dtype)
    p = pred.clamp(eps, 1.0 - eps)
    return -(p.log() * y + (1.0 - p).log() * (1.0 - y)).mean()


def loss_l1_grad(pred: Tensor, target, lambda_grad=1.0) -> Tensor:
    """Mean absolute error plus ``lambda_grad`` times the L1 error of forward differences."""
    _check(pred, target)
    d = pred - (target if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype))
    loss = d.abs().mean()
    if lambda_grad:
        dx = d[..., :, 1:] - d[..., :, :-1]
        dy = d[..., 1:, :] - d[..., :-1, :]
        loss = loss + (dx.abs().mean() + dy.abs().mean()) * lambda_grad
    return loss
