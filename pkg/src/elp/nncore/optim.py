"""Adam with bias correction and the halving learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import InvalidParam


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 1e-4
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr=None):
    """Update ``params`` (name -> ndarray) in place and return them.

    ``grads`` maps the same names to gradients; missing or ``None`` gradients
    count as zero, which leaves a fresh parameter untouched.
    """
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        if state.m[name].shape != p.shape:
            raise InvalidParam(f"moment shape mismatch for {name}")
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


class Adam:
    """Stateful wrapper driving :func:`adam_step` over a module's parameters."""

    def __init__(self, parameters, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.parameters = dict(parameters)
        self.state = AdamState(beta1=betas[0], beta2=betas[1], eps=eps, lr=lr)

    @property
    def lr(self):
        return self.state.lr

    @lr.setter
    def lr(self, value):
        self.state.lr = value

    def step(self):
        data = {name: p.data for name, p in self.parameters.items()}
        grads = {name: p.grad for name, p in self.parameters.items()}
        adam_step(data, grads, self.state)

    def zero_grad(self):
        for p in self.parameters.values():
            p.grad = None


def lr_schedule(epoch, base_lr=1e-4, factor=0.5):
    if epoch < 0:
        raise InvalidParam("epoch must be >= 0")
    return base_lr * factor**epoch
