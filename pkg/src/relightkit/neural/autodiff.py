"""A small reverse-mode automatic differentiation engine over numpy arrays.

Every :class:`Tensor` records the operation that produced it; calling
:meth:`Tensor.backward` on a scalar walks the graph once in reverse
topological order and accumulates ``.grad`` on every node that requires it.
"""
from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


_BRANCHES = None


class BranchLog:
    """Branch masks of the piecewise ops (leaky ReLU, abs, clamp) in evaluation order."""

    def __init__(self, replay=None):
        self.masks = []
        self.replay = replay
        self._pos = 0

    def take(self, mask):
        self.masks.append(mask)
        if self.replay is None:
            return mask
        if self._pos >= len(self.replay.masks) or self.replay.masks[self._pos].shape != mask.shape:
            raise RuntimeError("graph differs from the recorded evaluation")
        self._pos += 1
        return self.replay.masks[self._pos - 1]

    def same_as(self, other) -> bool:
        return len(self.masks) == len(other.masks) and all(
            np.array_equal(a, b) for a, b in zip(self.masks, other.masks)
        )


@contextlib.contextmanager
def record_branches(replay: BranchLog | None = None):
    """Log which branch every piecewise op takes inside the block.

    With ``replay`` set, each op reuses the branch recorded there instead of
    its own, so the block evaluates the linear piece active in the recorded
    run. The branches the ops would have chosen are still logged.
    """
    global _BRANCHES
    prev = _BRANCHES
    _BRANCHES = BranchLog(replay)
    try:
        yield _BRANCHES
    finally:
        _BRANCHES = prev


def _branch(mask):
    return mask if _BRANCHES is None else _BRANCHES.take(mask)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    # make ndarray binary operators defer to the reflected Tensor methods
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = _parents
        self._backward = _backward

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # graph plumbing -------------------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        """Create a result node; record the edge only when some parent needs grads."""
        parents = tuple(p for p in parents if isinstance(p, Tensor))
        needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        if not needs:
            return Tensor(data)
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed requires a scalar tensor")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            # interior node: pass gradients through without storing them
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        o = _lift(other, self.dtype)
        out = self.data + o.data
        s1, s2 = self.shape, o.shape
        return Tensor._make(out, (self, o), lambda g: (_unbroadcast(g, s1), _unbroadcast(g, s2)))

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        o = _lift(other, self.dtype)
        s1, s2 = self.shape, o.shape
        return Tensor._make(self.data - o.data, (self, o), lambda g: (_unbroadcast(g, s1), _unbroadcast(-g, s2)))

    def __rsub__(self, other):
        return _lift(other, self.dtype) - self

    def __mul__(self, other):
        o = _lift(other, self.dtype)
        a, b = self.data, o.data
        return Tensor._make(
            a * b, (self, o), lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = _lift(other, self.dtype)
        a, b = self.data, o.data
        out = a / b
        return Tensor._make(
            out, (self, o), lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * out / b, b.shape))
        )

    def __rtruediv__(self, other):
        return _lift(other, self.dtype) / self

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("tensor exponents are not supported; use exp/log")
        a = self.data
        e = float(exponent)
        out = a**e
        return Tensor._make(out, (self,), lambda g: (g * e * a ** (e - 1.0),))

    def __rpow__(self, base):
        # base ** self for a positive scalar base
        b = float(base)
        out = np.power(b, self.data).astype(self.dtype)
        lnb = np.log(b)
        return Tensor._make(out, (self,), lambda g: (g * out * lnb,))

    # elementwise functions -------------------------------------------------

    def exp(self):
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,))

    def log(self):
        a = self.data
        return Tensor._make(np.log(a), (self,), lambda g: (g / a,))

    def sqrt(self):
        out = np.sqrt(self.data)
        return Tensor._make(out, (self,), lambda g: (g * 0.5 / out,))

    def abs(self):
        a = self.data
        if _BRANCHES is None:
            return Tensor._make(np.abs(a), (self,), lambda g: (g * np.sign(a),))
        sign = np.where(_branch(a >= 0), 1.0, -1.0).astype(a.dtype)
        return Tensor._make(a * sign, (self,), lambda g: (g * sign,))

    def clamp(self, lo=None, hi=None):
        """Clip values; gradient is passed only where the input was inside the range."""
        a = self.data
        out = np.clip(a, lo, hi)
        mask = np.ones(a.shape, dtype=bool)
        if lo is not None:
            mask &= a >= lo
        if hi is not None:
            mask &= a <= hi
        if _BRANCHES is not None:
            # a frozen clamp keeps each entry on its recorded side
            below = a < lo if lo is not None else np.zeros_like(mask)
            mask, below = _branch(np.stack([mask, below]))
            out = np.where(mask, a, np.where(below, lo if lo is not None else 0, hi if hi is not None else 0))
            out = out.astype(a.dtype)
        return Tensor._make(out, (self,), lambda g: (g * mask,))

    def clamp_min(self, lo):
        return self.clamp(lo, None)

    def sigmoid(self):
        out = 1.0 / (1.0 + np.exp(-self.data))
        return Tensor._make(out, (self,), lambda g: (g * out * (1.0 - out),))

    def leaky_relu(self, slope=0.1):
        a = self.data
        pos = _branch(a >= 0)
        out = np.where(pos, a, slope * a)
        return Tensor._make(out, (self,), lambda g: (np.where(pos, g, slope * g),))

    # reductions and shape ops ---------------------------------------------

    def sum(self, axis=None, keepdims=False):
        shape = self.shape
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return Tensor._make(out, (self,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        old = self.shape
        return Tensor._make(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    def __getitem__(self, idx):
        shape, dtype = self.shape, self.dtype

        basic = all(isinstance(i, (slice, int, type(Ellipsis))) or i is None
                    for i in (idx if isinstance(idx, tuple) else (idx,)))

        def back(g):
            full = np.zeros(shape, dtype=dtype)
            if basic:
                full[idx] = g
            else:
                np.add.at(full, idx, g)
            return (full,)

        return Tensor._make(self.data[idx], (self,), back)


def _lift(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is not None and np.isscalar(x):
        # keep python scalars from promoting float32 graphs to float64
        return Tensor(np.asarray(x, dtype=dtype))
    return Tensor(np.asarray(x))


def tensor(data, requires_grad=False, name=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def concat(tensors, axis=1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]
    return Tensor._make(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def maximum_scalar(x, lo):
    """``max(x, lo)`` for arrays or tensors."""
    if isinstance(x, Tensor):
        return x.clamp_min(lo)
    return np.maximum(x, lo)


def minimum_scalar(x, hi):
    if isinstance(x, Tensor):
        return x.clamp(None, hi)
    return np.minimum(x, hi)


def values(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)
