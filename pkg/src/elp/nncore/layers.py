"""Parameterised layers built on the tensor ops."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Minimal container: parameters are discovered from attributes in definition order."""

    training = True

    def parameters(self):
        return dict(self.named_parameters())

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = self.parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data = value.copy()


def _uniform(rng, bound, shape):
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True):
        bound = 1.0 / math.sqrt(d_in)
        self.weight = _uniform(rng, bound, (d_in, d_out))
        self.bias = _uniform(rng, bound, (d_out,)) if bias else None

    def __call__(self, x):
        out = T.matmul(x, self.weight)
        return out if self.bias is None else out + self.bias


class Conv1d(Module):
    """Channel-last convolution with same padding."""

    def __init__(self, c_in, c_out, kernel, rng, bias=True):
        bound = 1.0 / math.sqrt(c_in * kernel)
        self.weight = _uniform(rng, bound, (kernel, c_in, c_out))
        self.bias = _uniform(rng, bound, (c_out,)) if bias else None

    def __call__(self, x):
        return T.conv1d(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5):
        self.gamma = Tensor(np.ones(d), requires_grad=True)
        self.beta = Tensor(np.zeros(d), requires_grad=True)
        self.eps = eps

    def __call__(self, x):
        return T.layernorm(x, self.gamma, self.beta, self.eps)


class Dropout(Module):
    def __init__(self, p, rng):
        self.p = p
        self.rng = rng

    def __call__(self, x):
        return T.dropout(x, self.p, self.rng, self.training)


def sinusoidal_table(length, d_model):
    """Fixed positional encoding, shape (length, d_model)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    div = np.exp(np.arange(0, d_model, 2, dtype=np.float64) * -(math.log(10000.0) / d_model))
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(pos * div)
    table[:, 1::2] = np.cos(pos * div)[:, : d_model // 2]
    return table
