"""A small reverse-mode differentiation engine over float64 numpy arrays.

Only the operations the separator needs are provided. Each op records its
parents and a closure that pushes the output gradient back to them;
:meth:`Tensor.backward` walks the graph in reverse topological order.
"""
from __future__ import annotations

import numpy as np


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Populate ``.grad`` on every tensor that requires it and feeds into ``self``."""
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that is not part of a recorded graph")
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError("backward() without a gradient needs a scalar output")
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
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if parent.requires_grad and pg is not None:
                    if id(parent) in grads:
                        grads[id(parent)] = grads[id(parent)] + pg
                    else:
                        grads[id(parent)] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return getitem(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _make(data, parents, backward):
    requires = any(p.requires_grad for p in parents)
    return Tensor(data, requires, parents if requires else (), backward if requires else None)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def sum_(a, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(out, (a,), back)


def mean(a) -> Tensor:
    n = a.data.size
    return _make(a.data.mean(), (a,), lambda g: (np.full(a.shape, g / n),))


def abs_(a) -> Tensor:
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def sqrt(a, eps: float = 0.0) -> Tensor:
    out = np.sqrt(a.data + eps)
    return _make(out, (a,), lambda g: (g * 0.5 / np.maximum(out, 1e-300),))


def square(a) -> Tensor:
    return _make(a.data**2, (a,), lambda g: (2.0 * a.data * g,))


def elu(a, alpha: float = 1.0) -> Tensor:
    neg_part = alpha * np.expm1(np.minimum(a.data, 0.0))
    out = np.where(a.data > 0, a.data, neg_part)
    return _make(out, (a,), lambda g: (g * np.where(a.data > 0, 1.0, neg_part + alpha),))


def getitem(a, index) -> Tensor:
    def back(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _make(a.data[index], (a,), back)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, sizes, axis=axis)),
    )


def conv2d(x, weight, bias=None) -> Tensor:
    """Stride-1 'same' convolution (cross-correlation) of ``(B, Cin, H, W)`` inputs.

    ``weight`` is ``(Cout, Cin, kh, kw)`` with odd kernel sizes.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    B, C, H, W = x.shape
    O, C2, kh, kw = weight.shape
    if C != C2:
        raise ValueError(f"conv2d: input has {C} channels, weight expects {C2}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    # (B, C, H, W, kh, kw) -> (B, H, W, C*kh*kw)
    cols = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(B, H, W, C * kh * kw)
    wmat = weight.data.reshape(O, -1)
    out = (cols @ wmat.T).transpose(0, 3, 1, 2)
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None]
        parents = (x, weight, bias)

    def back(g):
        g_rows = g.transpose(0, 2, 3, 1).reshape(-1, O)
        gw = (g_rows.T @ cols.reshape(-1, C * kh * kw)).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g_rows @ wmat).reshape(B, H, W, C, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + H, j : j + W] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, ph : ph + H, pw : pw + W]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _make(out, parents, back)


def avg_pool2(x) -> Tensor:
    """2x2 average pooling over the last two axes (sizes must be even)."""
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"avg_pool2 needs even spatial sizes, got {(H, W)}")
    out = x.data.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def back(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0,)

    return _make(out, (x,), back)


def upsample2(x) -> Tensor:
    """Nearest-neighbour 2x upsampling over the last two axes."""
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return _make(out, (x,), lambda g: (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),))


def freq_linear(x, weight, bias=None) -> Tensor:
    """``y[..., f] = sum_g weight[f, g] x[..., g] + bias[f]`` along the last axis."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"freq_linear: input has {x.shape[-1]} bins, weight expects {weight.shape[1]}")
    out = x.data @ weight.data.T
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents = (x, weight, bias)

    def back(g):
        flat_g = g.reshape(-1, g.shape[-1])
        grads = [g @ weight.data, flat_g.T @ x.data.reshape(-1, x.shape[-1])]
        if bias is not None:
            grads.append(flat_g.sum(axis=0))
        return tuple(grads)

    return _make(out, parents, back)
