"""Reverse-mode automatic differentiation over numpy arrays.

Each op builds a ``Tensor`` that remembers its parents and a closure mapping
the output gradient to parent gradients. Only tensors that depend on a
trainable leaf record a graph, so constant inputs cost nothing extra.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

_GRAD = [True]


@contextlib.contextmanager
def no_grad():
    prev = _GRAD[0]
    _GRAD[0] = False
    try:
        yield
    finally:
        _GRAD[0] = prev


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "parents", "_back", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, data, parents: Sequence["Tensor"] = (), back: Optional[Callable] = None,
                 requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self._back = back
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into every trainable leaf's ``grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward without a seed needs a scalar")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._back is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node.parents, node._back(g)):
                if pg is None or not p.requires_grad:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else prev + pg

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, o):
        if isinstance(o, Tensor):
            return mul(self, reciprocal(o))
        return mul(self, 1.0 / np.asarray(o, dtype=np.float64))

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, back) -> Tensor:
    if _GRAD[0] and any(p.requires_grad for p in parents):
        return Tensor(data, parents, back, requires_grad=True)
    return Tensor(data)


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def detach(x: Tensor) -> Tensor:
    return Tensor(as_tensor(x).data)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b), lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b), lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def reciprocal(a) -> Tensor:
    a = as_tensor(a)
    y = 1.0 / a.data
    return _node(y, (a,), lambda g: (-g * y * y,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _node(a.data @ b.data, (a, b), back)


def dense(x, W, b=None) -> Tensor:
    """``x @ W + b`` for ``x`` of shape (..., n_in)."""
    x, W = as_tensor(x), as_tensor(W)
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"dense: input width {x.shape[-1]} does not match weight rows {W.shape[0]}")
    y = x.data @ W.data
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[1],):
            raise ShapeError(f"dense: bias shape {b.shape} does not match {W.shape[1]}")
        y = y + b.data
    parents = (x, W) if b is None else (x, W, b)

    def back(g):
        gx = g @ W.data.T
        gW = x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        if b is None:
            return gx, gW
        return gx, gW, g.reshape(-1, g.shape[-1]).sum(axis=0)

    return _node(y, parents, back)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    y = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(y, (a,), back)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    basic = isinstance(idx, (int, slice)) or (
        isinstance(idx, tuple) and all(isinstance(k, (int, slice)) or k is Ellipsis for k in idx))

    def back(g):
        z = np.zeros_like(a.data)
        if basic:
            z[idx] += g
        else:
            np.add.at(z, idx, g)
        return (z,)

    return _node(a.data[idx], (a,), back)


def concat(xs: Sequence, axis=-1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([x.data for x in xs], axis=axis), xs,
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(xs: Sequence, axis=0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    return _node(np.stack([x.data for x in xs], axis=axis), xs,
                 lambda g: tuple(np.moveaxis(g, axis, 0)))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.data)
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _node(y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    m = a.data > 0
    return _node(a.data * m, (a,), lambda g: (g * m,))


def leaky_relu(a, slope=0.2) -> Tensor:
    a = as_tensor(a)
    m = np.where(a.data > 0, 1.0, slope)
    return _node(a.data * m, (a,), lambda g: (g * m,))


def elu(a, alpha=1.0) -> Tensor:
    a = as_tensor(a)
    neg = alpha * np.expm1(np.minimum(a.data, 0.0))
    y = np.where(a.data > 0, a.data, neg)
    d = np.where(a.data > 0, 1.0, neg + alpha)
    return _node(y, (a,), lambda g: (g * d,))


def masked_softmax(scores, mask, axis=-1) -> Tensor:
    """Softmax over entries where ``mask`` is 1; fully masked rows give zeros."""
    scores = as_tensor(scores)
    m = np.asarray(mask, dtype=bool)
    z = np.where(m, scores.data, -np.inf)
    zmax = np.max(z, axis=axis, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    e = np.where(m, np.exp(z - zmax), 0.0)
    tot = e.sum(axis=axis, keepdims=True)
    p = e / np.where(tot > 0, tot, 1.0)

    def back(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _node(p, (scores,), back)


def log_softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return _node(y, (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def softmax_xent(logits, onehot) -> tuple[Tensor, np.ndarray]:
    """Mean cross-entropy over the batch and the class probabilities."""
    logits = as_tensor(logits)
    onehot = np.asarray(onehot, dtype=np.float64)
    if logits.shape[-1] < 2:
        raise ShapeError("softmax_xent needs at least two classes")
    if onehot.shape != logits.shape:
        raise ShapeError("labels must match logits shape")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    p = np.exp(logp)
    n = int(np.prod(logits.shape[:-1])) or 1
    loss = -(onehot * logp).sum() / n
    return _node(loss, (logits,), lambda g: (g * (p - onehot) / n,)), p


def bce_with_logits(logits, target, weight=None) -> Tensor:
    """Summed binary cross-entropy ``-[y log p + (1-y) log(1-p)]`` with optional weights."""
    logits = as_tensor(logits)
    y = np.asarray(target, dtype=np.float64)
    w = np.ones_like(logits.data) if weight is None else np.asarray(weight, dtype=np.float64)
    x = logits.data
    loss = (w * (np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x))))).sum()
    p = _sigmoid(x)
    return _node(loss, (logits,), lambda g: (g * w * (p - y),))


def l2_normalize(a, axis=-1, eps=1e-12) -> Tensor:
    """``x / ||x||`` with rows of norm below ``eps`` mapped to zero."""
    a = as_tensor(a)
    n = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    ok = n > eps
    safe = np.where(ok, n, 1.0)
    y = np.where(ok, a.data / safe, 0.0)

    def back(g):
        return (np.where(ok, (g - y * (g * y).sum(axis=axis, keepdims=True)) / safe, 0.0),)

    return _node(y, (a,), back)


def lstm_cell(x, h, c, Wx, Wh, b) -> tuple[Tensor, Tensor]:
    """One LSTM step with gate layout [i, f, g, o] along the last axis."""
    x, h, c, Wx, Wh, b = (as_tensor(t) for t in (x, h, c, Wx, Wh, b))
    H = h.shape[-1]
    if Wx.shape != (x.shape[-1], 4 * H) or Wh.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ShapeError("lstm_cell: parameter shapes do not match input/hidden sizes")
    z = x.data @ Wx.data + h.data @ Wh.data + b.data
    i = _sigmoid(z[..., :H])
    f = _sigmoid(z[..., H:2 * H])
    gg = np.tanh(z[..., 2 * H:3 * H])
    o = _sigmoid(z[..., 3 * H:])
    c2 = f * c.data + i * gg
    tc = np.tanh(c2)
    h2 = o * tc
    out = np.stack([h2, c2])

    def back(g):
        gh, gc = g[0], g[1]
        gc = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            gc * gg * i * (1.0 - i),
            gc * c.data * f * (1.0 - f),
            gc * i * (1.0 - gg * gg),
            gh * tc * o * (1.0 - o),
        ], axis=-1)
        dz2 = dz.reshape(-1, 4 * H)
        return (dz @ Wx.data.T, dz @ Wh.data.T, gc * f,
                x.data.reshape(-1, x.shape[-1]).T @ dz2,
                h.data.reshape(-1, H).T @ dz2, dz2.sum(axis=0))

    node = _node(out, (x, h, c, Wx, Wh, b), back)
    return getitem(node, 0), getitem(node, 1)


def where(cond, a, b) -> Tensor:
    """Elementwise select with a constant boolean/0-1 condition."""
    m = np.asarray(cond, dtype=np.float64)
    return add(mul(a, m), mul(b, 1.0 - m))


def ppo_clip_objective(logp, logp_old, adv, eps=0.2) -> Tensor:
    """Mean of ``min(r A, clip(r, 1-eps, 1+eps) A)`` with ``r = exp(logp - logp_old)``."""
    logp = as_tensor(logp)
    r = np.exp(logp.data - np.asarray(logp_old))
    A = np.asarray(adv, dtype=np.float64)
    unclipped = r * A
    clipped = np.clip(r, 1.0 - eps, 1.0 + eps) * A
    obj = np.minimum(unclipped, clipped)
    active = unclipped <= clipped
    n = obj.size
    return _node(obj.mean(), (logp,), lambda g: (g * np.where(active, A * r, 0.0) / n,))
