"""Convolution primitives and activations on :class:`Tensor` batches ``(N, C, H, W)``."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import Tensor

LEAKY_SLOPE = 0.1


class ConvShapeError(ValueError):
    pass


def _pad4(padding):
    if isinstance(padding, (int, np.integer)):
        return (int(padding),) * 4
    padding = tuple(int(p) for p in padding)
    if len(padding) == 2:
        return padding[0], padding[1], padding[0], padding[1]
    if len(padding) == 4:
        return padding
    raise ConvShapeError(f"bad padding {padding!r}")


def same_padding(kernel, stride):
    """Padding that halves (stride 2) or preserves (stride 1) the spatial size.

    Even kernels at stride 1 pad one extra row/column after the input.
    """
    if stride == 1:
        lo, hi = (kernel - 1) // 2, kernel // 2
        return (lo, hi, lo, hi)
    if stride == 2:
        p = max(kernel // 2 - 1, 0)
        return (p, p, p, p)
    raise ConvShapeError(f"unsupported stride {stride}")


def _im2col(xp, k, s, ho, wo):
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    # (N, C, Ho, Wo, K, K) -> (N, C*K*K, Ho*Wo)
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, ho * wo)


def _col2im(cols, shape, k, s, ho, wo):
    n, c, hp, wp = shape
    out = np.zeros(shape, dtype=cols.dtype)
    cols = cols.reshape(n, c, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + s * ho : s, j : j + s * wo : s] += cols[:, :, i, j]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0, transposed=False) -> Tensor:
    """2-D cross-correlation, or its transpose when ``transposed`` is set.

    Weights are ``(C_out, C_in, K, K)`` for the normal mode and
    ``(C_in, C_out, K, K)`` for the transposed mode. ``padding`` is an int or
    ``(top, bottom, left, right)``; in transposed mode it is cropped from the
    full-size output.
    """
    if transposed:
        return _conv_transpose(x, weight, bias, stride, padding)
    xd, wd = x.data, weight.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ConvShapeError("conv2d expects 4-D input and weight")
    n, c, h, w = xd.shape
    o, ci, k, k2 = wd.shape
    if ci != c or k != k2:
        raise ConvShapeError(f"input has {c} channels, weight expects {ci} (kernel {k}x{k2})")
    pt, pb, pl, pr = _pad4(padding)
    xp = np.pad(xd, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else xd
    hp, wp = xp.shape[2:]
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ConvShapeError(f"kernel {k} does not fit input {h}x{w}")
    cols = _im2col(xp, k, stride, ho, wo)
    wmat = wd.reshape(o, -1)
    out = np.matmul(wmat, cols).reshape(n, o, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)

    def back(g):
        g2 = g.reshape(n, o, ho * wo)
        gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape)
        gx = None
        if x.requires_grad:
            if stride == 1 and o < c:
                # full correlation of g with the flipped kernel; cheaper when C_out < C_in
                gp = np.pad(g, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
                wrot = wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, -1)
                gxp = np.matmul(wrot, _im2col(gp, k, 1, hp, wp)).reshape(n, c, hp, wp)
            else:
                gxp = _col2im(np.matmul(wmat.T, g2), xp.shape, k, stride, ho, wo)
            gx = gxp[:, :, pt : pt + h, pl : pl + w]
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, back if bias is not None else (lambda g: back(g)[:2]))


def _conv_transpose(x, weight, bias, stride, padding):
    xd, wd = x.data, weight.data
    n, c, h, w = xd.shape
    ci, o, k, k2 = wd.shape
    if ci != c or k != k2:
        raise ConvShapeError(f"input has {c} channels, transposed weight expects {ci}")
    pt, pb, pl, pr = _pad4(padding)
    hp, wp = (h - 1) * stride + k, (w - 1) * stride + k
    wmat = wd.reshape(ci, -1)
    cols = np.matmul(wmat.T, xd.reshape(n, c, h * w))
    full = _col2im(cols, (n, o, hp, wp), k, stride, h, w)
    out = full[:, :, pt : hp - pb, pl : wp - pr]
    ho, wo = out.shape[2:]
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)
    xflat = xd.reshape(n, c, h * w)

    def back(g):
        gfull = np.zeros((n, o, hp, wp), dtype=g.dtype)
        gfull[:, :, pt : pt + ho, pl : pl + wo] = g
        gcols = _im2col(gfull, k, stride, h, w)
        gw = np.matmul(xflat, gcols.transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape)
        gx = np.matmul(wmat, gcols).reshape(xd.shape) if x.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(np.ascontiguousarray(out), parents, back)


def leaky_relu(x: Tensor, slope=LEAKY_SLOPE) -> Tensor:
    return x.leaky_relu(slope)


def sigmoid(x: Tensor) -> Tensor:
    return x.sigmoid()


def normalize_channels(x: Tensor, eps=1e-12) -> Tensor:
    """Scale every pixel vector (axis 1) to unit Euclidean norm."""
    norm = ((x * x).sum(axis=1, keepdims=True) + eps).sqrt()
    return x / norm


def he_normal(rng: np.random.Generator, shape, fan_in, dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
