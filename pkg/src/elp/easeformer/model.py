"""Encoder-decoder network: ProbSparse encoder with distilling, generative decoder."""

from __future__ import annotations

import numpy as np

from .. import nncore as nn
from ..exceptions import ShapeError
from ..nncore import Tensor
from .attention import AttentionLayer
from .config import EaseformerConfig


class DataEmbedding(nn.Module):
    """Value convolution plus fixed sinusoidal positions; no calendar features."""

    def __init__(self, n_features, d_model, dropout, rng, max_len=512):
        self.value = nn.Conv1d(n_features, d_model, 3, rng)
        self.positions = nn.sinusoidal_table(max_len, d_model)
        self.drop = nn.Dropout(dropout, rng)

    def __call__(self, x):
        length = x.shape[-2]
        if length > self.positions.shape[0]:
            self.positions = nn.sinusoidal_table(length, self.positions.shape[1])
        return self.drop(self.value(x) + Tensor(self.positions[:length]))


class FeedForward(nn.Module):
    def __init__(self, d_model, d_ff, rng):
        self.fc1 = nn.Linear(d_model, d_ff, rng)
        self.fc2 = nn.Linear(d_ff, d_model, rng)

    def __call__(self, x):
        return self.fc2(nn.relu(self.fc1(x)))


class EncoderLayer(nn.Module):
    def __init__(self, cfg, rng):
        self.attention = AttentionLayer(cfg.d_model, cfg.n_heads, rng, sparse=True, factor=cfg.factor)
        self.ff = FeedForward(cfg.d_model, cfg.ff_width, rng)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout, rng)

    def __call__(self, x, sample_rng):
        x = self.norm1(x + self.drop(self.attention(x, x, sample_rng)))
        return self.norm2(x + self.drop(self.ff(x)))


class DistillLayer(nn.Module):
    """conv(k=3) -> ELU -> max-pool(3, stride 2): length L becomes ceil(L/2)."""

    def __init__(self, d_model, rng):
        self.conv = nn.Conv1d(d_model, d_model, 3, rng)

    def __call__(self, x):
        return nn.maxpool1d(nn.elu(self.conv(x)), kernel=3, stride=2, padding=1)


class DecoderLayer(nn.Module):
    def __init__(self, cfg, rng):
        self.self_attention = AttentionLayer(cfg.d_model, cfg.n_heads, rng, sparse=False, causal=True)
        self.cross_attention = AttentionLayer(cfg.d_model, cfg.n_heads, rng, sparse=False)
        self.ff = FeedForward(cfg.d_model, cfg.ff_width, rng)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout, rng)

    def __call__(self, x, memory):
        x = self.norm1(x + self.drop(self.self_attention(x, x)))
        x = self.norm2(x + self.drop(self.cross_attention(x, memory)))
        return self.norm3(x + self.drop(self.ff(x)))


class Easeformer(nn.Module):
    """The forecasting network.

    Weight shapes depend only on the architecture fields of the config, so
    the Informer-style baseline and the full model are directly comparable.
    """

    def __init__(self, config: EaseformerConfig, rng):
        cfg = config
        self.config = cfg
        self.enc_embedding = DataEmbedding(cfg.n_features, cfg.d_model, cfg.dropout, rng)
        self.dec_embedding = DataEmbedding(cfg.n_features, cfg.d_model, cfg.dropout, rng)
        self.encoder_layers = [EncoderLayer(cfg, rng) for _ in range(cfg.e_layers)]
        self.distill_layers = [DistillLayer(cfg.d_model, rng) for _ in range(cfg.e_layers - 1)]
        self.enc_norm = nn.LayerNorm(cfg.d_model)
        self.decoder_layers = [DecoderLayer(cfg, rng) for _ in range(cfg.d_layers)]
        self.dec_norm = nn.LayerNorm(cfg.d_model)
        self.projection = nn.Linear(cfg.d_model, 1, rng)

    def encode(self, x_en, sample_rng):
        h = self.enc_embedding(x_en)
        for i, layer in enumerate(self.encoder_layers):
            h = layer(h, sample_rng)
            if i < len(self.distill_layers):
                h = self.distill_layers[i](h)
        return self.enc_norm(h)

    def __call__(self, x_en, x_de, sample_rng=None):
        """Predict ``pred_len`` target values per sample in one pass.

        ``x_en``: (B, seq_len, F) or (seq_len, F); ``x_de``: (B, label_len +
        pred_len, F). Returns (B, pred_len) or (pred_len,).
        """
        cfg = self.config
        x_en = nn.as_tensor(x_en)
        x_de = nn.as_tensor(x_de)
        single = x_en.ndim == 2
        if single:
            x_en = nn.reshape(x_en, (1,) + x_en.shape)
            x_de = nn.reshape(x_de, (1,) + x_de.shape)
        if x_en.shape[-1] != cfg.n_features or x_de.shape[-1] != cfg.n_features:
            raise ShapeError(f"expected {cfg.n_features} feature columns")
        if x_de.shape[-2] < cfg.pred_len:
            raise ShapeError("decoder input shorter than the prediction length")
        if sample_rng is None:
            # fixed sampling in evaluation keeps inference deterministic
            sample_rng = np.random.default_rng(cfg.seed)
        memory = self.encode(x_en, sample_rng)
        h = self.dec_embedding(x_de)
        for layer in self.decoder_layers:
            h = layer(h, memory)
        out = self.projection(self.dec_norm(h))
        out = out[:, -cfg.pred_len :, 0]
        return nn.reshape(out, (cfg.pred_len,)) if single else out
