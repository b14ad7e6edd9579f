"""Reverse-mode differentiation over float64 numpy arrays.

Each op returns a new :class:`Tensor` holding its parents and a closure that
maps the output gradient to parent gradients. ``Tensor.backward`` walks the
recorded graph in reverse topological order.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._vjp = _vjp
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() on a non-scalar needs an explicit output gradient")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.data.shape:
            raise ValueError(f"output gradient shape {grad.shape} != tensor shape {self.data.shape}")

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
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not p.requires_grad:
                    continue
                grads[id(p)] = grads[id(p)] + pg if id(p) in grads else pg

    # arithmetic used by small test models
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.shape != b.shape:
        raise ValueError(f"add: shapes {a.shape} and {b.shape} differ")
    return Tensor(a.data + b.data, _parents=(a, b), _vjp=lambda g: (g, g))


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.shape != b.shape:
        raise ValueError(f"mul: shapes {a.shape} and {b.shape} differ")
    return Tensor(a.data * b.data, _parents=(a, b), _vjp=lambda g: (g * b.data, g * a.data))


def total(x: Tensor) -> Tensor:
    return Tensor(x.data.sum(), _parents=(x,), _vjp=lambda g: (np.broadcast_to(g, x.shape).copy(),))


def reshape(x: Tensor, shape) -> Tensor:
    return Tensor(x.data.reshape(shape), _parents=(x,), _vjp=lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return Tensor(x.data.transpose(axes), _parents=(x,), _vjp=lambda g: (g.transpose(inv),))


def conv3x3(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Stride-1 3x3 convolution with zero padding 1. x: (B,C,H,W), w: (O,C,3,3), b: (O,)."""
    B, C, H, W = x.shape
    O = w.shape[0]
    if w.shape != (O, C, 3, 3):
        raise ValueError(f"conv3x3: weight {w.shape} incompatible with {C} input channels")
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = sliding_window_view(xp, (3, 3), axis=(2, 3)).transpose(0, 2, 3, 1, 4, 5).reshape(B * H * W, C * 9)
    wm = w.data.reshape(O, C * 9)
    out = (cols @ wm.T + b.data).reshape(B, H, W, O).transpose(0, 3, 1, 2)

    def vjp(g):
        gm = g.transpose(0, 2, 3, 1).reshape(B * H * W, O)
        gw = (gm.T @ cols).reshape(w.shape)
        gb = gm.sum(axis=0)
        if not x.requires_grad:
            return None, gw, gb
        gcols = (gm @ wm).reshape(B, H, W, C, 3, 3).transpose(0, 3, 1, 2, 4, 5)
        gxp = np.zeros_like(xp)
        for i in range(3):
            for j in range(3):
                gxp[:, :, i:i + H, j:j + W] += gcols[..., i, j]
        return gxp[:, :, 1:-1, 1:-1], gw, gb

    return Tensor(out, _parents=(x, w, b), _vjp=vjp)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor(np.where(mask, x.data, 0.0), _parents=(x,), _vjp=lambda g: (g * mask,))


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; the first maximal element (row-major) receives the gradient."""
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"maxpool2: odd spatial shape {x.shape}")
    quads = [x.data[:, :, i::2, j::2] for i in (0, 1) for j in (0, 1)]
    out = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))
    masks, taken = [], np.zeros(out.shape, dtype=bool)
    for q in quads:
        m = (q == out) & ~taken
        taken |= m
        masks.append(m)

    def vjp(g):
        gx = np.empty(x.shape)
        for (i, j), m in zip(((0, 0), (0, 1), (1, 0), (1, 1)), masks):
            gx[:, :, i::2, j::2] = g * m
        return (gx,)

    return Tensor(out, _parents=(x,), _vjp=vjp)


def patch_mean(x: Tensor, k: int) -> Tensor:
    """Average over non-overlapping k x k blocks."""
    B, C, H, W = x.shape
    if H % k or W % k:
        raise ValueError(f"patch_mean: shape {x.shape} not divisible by {k}")
    out = x.data.reshape(B, C, H // k, k, W // k, k).mean(axis=(3, 5))

    def vjp(g):
        return (np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k),)

    return Tensor(out, _parents=(x,), _vjp=vjp)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-location linear map over channels. x: (B,C,h,w), w: (K,C), b: (K,)."""
    out = np.einsum("bchw,kc->bkhw", x.data, w.data) + b.data[None, :, None, None]

    def vjp(g):
        return (np.einsum("bkhw,kc->bchw", g, w.data),
                np.einsum("bkhw,bchw->kc", g, x.data),
                g.sum(axis=(0, 2, 3)))

    return Tensor(out, _parents=(x, w, b), _vjp=vjp)


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(0.0, x.data)
    sig = np.exp(-np.logaddexp(0.0, -x.data))
    return Tensor(out, _parents=(x,), _vjp=lambda g: (g * sig,))


def softmax_cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean cross-entropy over every (image, location). logits: (B,K,h,w), target: (B,h,w) ints."""
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    target = np.asarray(target, dtype=np.int64)
    n = target.size
    picked = np.take_along_axis(logp, target[:, None], axis=1)
    value = -picked.sum() / n

    def vjp(g):
        d = np.exp(logp)
        np.put_along_axis(d, target[:, None], np.take_along_axis(d, target[:, None], axis=1) - 1.0, axis=1)
        return (g * d / n,)

    return Tensor(value, _parents=(logits,), _vjp=vjp)
