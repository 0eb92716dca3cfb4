"""Reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tensor` records the op that produced it and a closure that pushes
its gradient to its parents. ``backward`` walks the graph once in reverse
topological order. Graph recording is skipped inside :func:`no_grad` and
for tensors whose inputs do not require gradients.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from ..exceptions import NumericsError, ShapeError

_local = threading.local()


def _grad_enabled():
    return getattr(_local, "grad_enabled", True)


def _debug_enabled():
    return getattr(_local, "debug", False)


@contextlib.contextmanager
def no_grad():
    prev = _grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


@contextlib.contextmanager
def debug_numerics(enabled=True):
    """Raise :class:`NumericsError` as soon as any op produces NaN or Inf."""
    prev = _debug_enabled()
    _local.debug = enabled
    try:
        yield
    finally:
        _local.debug = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        # gradients are never mutated in place, so views can be stored as-is
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        if grad is None:
            if self.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar tensor")
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
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self._accumulate(np.broadcast_to(grad, self.shape))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior gradients are not needed once propagated
                if node._parents:
                    node.grad = None if node is not self else node.grad

    # operator sugar; implementations live in ops.py
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    if _debug_enabled() and not np.all(np.isfinite(data)):
        raise NumericsError(f"non-finite value produced by {op}")
    needs = _grad_enabled() and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, op=op)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _send(t, g):
    if t.requires_grad:
        t._accumulate(g)


# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _send(a, _unbroadcast(g, a.shape))
        _send(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _send(a, _unbroadcast(g, a.shape))
        _send(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            _send(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _send(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            _send(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _send(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), backward, "div")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands with at least two dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    if b.ndim == 2:
        # activations @ weight: fold the batch axes into one GEMM
        k, n = b.shape
        a2 = a.data.reshape(-1, k)

        def backward(g):
            g2 = g.reshape(-1, n)
            if a.requires_grad:
                _send(a, (g2 @ b.data.T).reshape(a.shape))
            if b.requires_grad:
                _send(b, a2.T @ g2)

        return _make((a2 @ b.data).reshape(a.shape[:-1] + (n,)), (a, b), backward, "matmul")

    def backward(g):
        if a.requires_grad:
            _send(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _send(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), backward, "matmul")


# activations


def elu(x, alpha=1.0):
    x = as_tensor(x)
    neg_part = alpha * np.expm1(np.minimum(x.data, 0.0))
    out = np.maximum(x.data, 0.0) + neg_part

    def backward(g):
        # d/dx is 1 above zero and alpha * exp(x) = neg_part + alpha at or below it
        _send(x, g * (neg_part + alpha + (1.0 - alpha) * (x.data > 0)))

    return _make(out, (x,), backward, "elu")


def relu(x):
    x = as_tensor(x)
    pos = x.data > 0

    def backward(g):
        _send(x, g * pos)

    return _make(np.maximum(x.data, 0.0), (x,), backward, "relu")


def softmax(x):
    """Softmax over the last axis."""
    x = as_tensor(x)
    out = x.data - np.max(x.data, axis=-1, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=-1, keepdims=True)

    def backward(g):
        _send(x, out * (g - (g * out).sum(axis=-1, keepdims=True)))

    return _make(out, (x,), backward, "softmax")


def layernorm(x, gamma, beta, eps=1e-5):
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError("layernorm affine parameters must match the last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def backward(g):
        if gamma.requires_grad:
            _send(gamma, (g * xhat).reshape(-1, n).sum(axis=0))
        if beta.requires_grad:
            _send(beta, g.reshape(-1, n).sum(axis=0))
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
            _send(x, gx)

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), backward, "layernorm")


def dropout(x, p, rng, training):
    x = as_tensor(x)
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape, dtype=np.float32) >= p) * (1.0 / (1.0 - p))

    def backward(g):
        _send(x, g * keep)

    return _make(x.data * keep, (x,), backward, "dropout")


# shape manipulation


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc

    def backward(g):
        _send(x, g.reshape(x.shape))

    return _make(out, (x,), backward, "reshape")


def transpose(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _send(x, np.transpose(g, inverse))

    return _make(np.transpose(x.data, axes), (x,), backward, "transpose")


def slice_(x, index):
    """Basic (non-fancy) indexing."""
    x = as_tensor(x)
    out = x.data[index]
    if isinstance(index, np.ndarray) or (
        isinstance(index, tuple) and any(isinstance(i, (np.ndarray, list)) for i in index)
    ):
        raise ShapeError("only basic slicing is differentiable; use take_rows for gathers")

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[index] += g
        _send(x, gx)

    return _make(np.array(out, copy=True), (x,), backward, "slice")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            _send(t, piece)

    return _make(out, tuple(tensors), backward, "concat")


def broadcast_to(x, shape):
    x = as_tensor(x)

    def backward(g):
        _send(x, _unbroadcast(g, x.shape))

    return _make(np.broadcast_to(x.data, shape).copy(), (x,), backward, "broadcast")


# reductions


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _send(x, np.broadcast_to(g, x.shape))

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _send(x, np.broadcast_to(g, x.shape) / count)

    return _make(x.data.mean(axis=axis, keepdims=keepdims), (x,), backward, "mean")


# indexing along the sequence axis (-2)


def take_rows(x, idx):
    """Gather rows ``idx[..., j]`` of ``x[..., :, :]``; ``idx`` has x's batch shape plus one axis."""
    x = as_tensor(x)
    idx = np.asarray(idx)
    full = np.broadcast_to(idx[..., None], idx.shape + (x.shape[-1],))

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, full, g, axis=-2)
        _send(x, gx)

    return _make(np.take_along_axis(x.data, full, axis=-2), (x,), backward, "take_rows")


def put_rows(base, idx, values):
    """Copy of ``base`` with rows ``idx`` replaced by ``values`` (indices must be unique per batch)."""
    base, values = as_tensor(base), as_tensor(values)
    idx = np.asarray(idx)
    full = np.broadcast_to(idx[..., None], idx.shape + (base.shape[-1],))
    out = base.data.copy()
    np.put_along_axis(out, full, values.data, axis=-2)

    def backward(g):
        if base.requires_grad:
            gb = g.copy()
            np.put_along_axis(gb, full, 0.0, axis=-2)
            _send(base, gb)
        if values.requires_grad:
            _send(values, np.take_along_axis(g, full, axis=-2))

    return _make(out, (base, values), backward, "put_rows")


def masked_fill(x, mask, value):
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)

    def backward(g):
        _send(x, _unbroadcast(np.where(mask, 0.0, g), x.shape))

    return _make(np.where(mask, value, x.data), (x,), backward, "masked_fill")


# sequence ops, channel-last layout (..., length, channels)


def _pad_same(kernel):
    if kernel % 2 == 0:
        raise ShapeError("same padding needs an odd kernel width")
    return (kernel - 1) // 2


def conv1d(x, weight, bias=None, padding="same"):
    """1-D convolution over axis -2.

    ``x``: (..., L, C_in); ``weight``: (k, C_in, C_out); ``bias``: (C_out,).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    k, c_in, c_out = weight.shape
    if x.shape[-1] != c_in:
        raise ShapeError(f"conv1d expects {c_in} input channels, got {x.shape[-1]}")
    pad = _pad_same(k) if padding == "same" else int(padding)
    length = x.shape[-2]
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)]
    xp = np.pad(x.data, widths)
    out_len = length + 2 * pad - k + 1
    cols = np.concatenate([xp[..., j : j + out_len, :] for j in range(k)], axis=-1)
    w2 = weight.data.reshape(k * c_in, c_out)
    out = cols @ w2
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents = (x, weight, bias)

    def backward(g):
        if weight.requires_grad:
            gw = cols.reshape(-1, k * c_in).T @ g.reshape(-1, c_out)
            _send(weight, gw.reshape(k, c_in, c_out))
        if bias is not None and bias.requires_grad:
            _send(bias, g.reshape(-1, c_out).sum(axis=0))
        if x.requires_grad:
            gcols = g @ w2.T
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[..., j : j + out_len, :] += gcols[..., j * c_in : (j + 1) * c_in]
            _send(x, gxp[..., pad : pad + length, :])

    return _make(out, parents, backward, "conv1d")


def maxpool1d(x, kernel=3, stride=2, padding=1):
    """Max-pool over axis -2 with -inf padding; ties route to the first maximum."""
    x = as_tensor(x)
    length = x.shape[-2]
    widths = [(0, 0)] * (x.ndim - 2) + [(padding, padding), (0, 0)]
    xp = np.pad(x.data, widths, constant_values=-np.inf)
    out_len = (length + 2 * padding - kernel) // stride + 1
    if out_len < 1:
        raise ShapeError("maxpool1d window larger than padded input")
    windows = np.stack(
        [xp[..., j : j + stride * (out_len - 1) + 1 : stride, :] for j in range(kernel)], axis=0
    )
    arg = windows.argmax(axis=0)
    out = np.take_along_axis(windows, arg[None], axis=0)[0]

    def backward(g):
        gxp = np.zeros_like(xp)
        for j in range(kernel):
            gxp[..., j : j + stride * (out_len - 1) + 1 : stride, :] += np.where(arg == j, g, 0.0)
        _send(x, gxp[..., padding : padding + length, :])

    return _make(out, (x,), backward, "maxpool1d")


def mse_loss(pred, target):
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        if pred.requires_grad:
            _send(pred, g * 2.0 * diff / n)
        if target.requires_grad:
            _send(target, -g * 2.0 * diff / n)

    return _make(np.mean(diff * diff), (pred, target), backward, "mse_loss")
