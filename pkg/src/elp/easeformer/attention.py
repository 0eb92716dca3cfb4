"""ProbSparse and dense scaled dot-product attention.

Tensors are laid out (..., length, head_dim). Query selection for ProbSparse
runs outside the autodiff graph: the chosen indices are constants and the
gradient flows through the gathered rows and the mean-of-values fallback.
"""

from __future__ import annotations

import math

import numpy as np

from .. import nncore as nn
from ..exceptions import InvalidParam
from ..nncore import Tensor


def top_count(length, factor=5):
    """``factor * ceil(ln length)`` capped at ``length`` and floored at 1."""
    if length < 1:
        raise InvalidParam("length must be positive")
    return max(1, min(length, factor * math.ceil(math.log(length))))


def sparsity_measure(q, k, n_sample=None, rng=None):
    """Max-mean measurement per query over a (sampled) key set.

    ``M(q_i, K) = max_j s_ij - mean_j s_ij`` with ``s_ij = q_i . k_j / sqrt(d)``.
    When ``n_sample`` is ``None`` or at least the number of keys, every key is
    used; otherwise one subset of ``n_sample`` keys is drawn without
    replacement and shared by all queries.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    n_keys = k.shape[-2]
    if n_sample is not None and n_sample < n_keys:
        if rng is None:
            raise InvalidParam("sampling keys needs a random generator")
        keys = np.sort(rng.choice(n_keys, size=n_sample, replace=False))
        k = k[..., keys, :]
    scores = q @ np.swapaxes(k, -1, -2) / math.sqrt(q.shape[-1])
    return scores.max(axis=-1) - scores.mean(axis=-1)


def select_queries(m, u):
    """Indices of the ``u`` largest measurements (stable: earlier query wins ties)."""
    return np.argsort(-m, axis=-1, kind="stable")[..., :u]


def dense_attention(q, k, v, causal=False):
    q, k, v = nn.as_tensor(q), nn.as_tensor(k), nn.as_tensor(v)
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = nn.matmul(q, nn.transpose(k, _swap_last(k.ndim))) * scale
    if causal:
        lq, lk = q.shape[-2], k.shape[-2]
        scores = nn.masked_fill(scores, np.triu(np.ones((lq, lk), dtype=bool), 1), -np.inf)
    return nn.matmul(nn.softmax(scores), v)


def probsparse_attention(q, k, v, u, n_sample=None, rng=None):
    """Full attention rows for the top-``u`` queries, mean of ``v`` for the rest."""
    q, k, v = nn.as_tensor(q), nn.as_tensor(k), nn.as_tensor(v)
    l_q = q.shape[-2]
    if u <= 0 or u > l_q:
        raise InvalidParam(f"u must lie in [1, {l_q}], got {u}")
    m = sparsity_measure(q.data, k.data, n_sample, rng)
    top = select_queries(m, u)
    chosen = nn.take_rows(q, top)
    active = dense_attention(chosen, k, v)
    base = nn.broadcast_to(nn.mean(v, axis=-2, keepdims=True), v.shape[:-2] + (l_q, v.shape[-1]))
    return nn.put_rows(base, top, active)


def _swap_last(ndim):
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


class AttentionLayer(nn.Module):
    """Multi-head projection wrapper around ProbSparse or dense attention."""

    def __init__(self, d_model, n_heads, rng, sparse=True, causal=False, factor=5):
        self.n_heads = n_heads
        self.sparse = sparse
        self.causal = causal
        self.factor = factor
        self.query = nn.Linear(d_model, d_model, rng)
        self.key = nn.Linear(d_model, d_model, rng)
        self.value = nn.Linear(d_model, d_model, rng)
        self.out = nn.Linear(d_model, d_model, rng)

    def _heads(self, x):
        *batch, length, d = x.shape
        x = nn.reshape(x, (*batch, length, self.n_heads, d // self.n_heads))
        nb = len(batch)
        return nn.transpose(x, tuple(range(nb)) + (nb + 1, nb, nb + 2))

    def __call__(self, x_q, x_kv, rng=None):
        q = self._heads(self.query(x_q))
        k = self._heads(self.key(x_kv))
        v = self._heads(self.value(x_kv))
        if self.sparse:
            l_q, l_k = q.shape[-2], k.shape[-2]
            ctx = probsparse_attention(
                q, k, v, top_count(l_q, self.factor), top_count(l_k, self.factor), rng
            )
        else:
            ctx = dense_attention(q, k, v, causal=self.causal)
        nb = ctx.ndim - 3
        ctx = nn.transpose(ctx, tuple(range(nb)) + (nb + 1, nb, nb + 2))
        *batch, length, heads, hd = ctx.shape
        return self.out(nn.reshape(ctx, (*batch, length, heads * hd)))
