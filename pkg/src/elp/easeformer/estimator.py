"""Scikit-learn style wrapper: fit on a training frame, forecast ``pred_len`` steps."""

from __future__ import annotations

import logging
from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .. import nncore as nn
from ..dataio import NormalizationStats, SeriesFrame, normalize_apply, normalize_fit, read_kv, write_kv
from ..domain import mae, mse
from ..exceptions import InsufficientHistory, InvalidDataset
from .config import EaseformerConfig
from .eit import DistancePreferenceTable, eit_transform
from .inputs import build_decoder_input, feature_matrix, make_windows
from .model import Easeformer

log = logging.getLogger(__name__)

_EVAL_CHUNK = 64


class EaseformerForecaster(BaseEstimator):
    """Trains one Easeformer on a sharing-state target (provider loss or consumer gain).

    ``fit`` takes a raw :class:`~elp.dataio.SeriesFrame`; normalization
    statistics and the distance preference table are learned from it alone.
    ``eval_set`` drives early stopping and best-checkpoint selection.
    """

    def __init__(
        self,
        d_model=512,
        n_heads=8,
        e_layers=2,
        d_layers=2,
        d_ff=None,
        seq_len=90,
        label_len=60,
        pred_len=30,
        factor=5,
        tau=0.85,
        eit_enabled=True,
        zero_init_decoder=False,
        dropout=0.05,
        base_lr=1e-4,
        lr_decay=0.5,
        epochs=10,
        batch_size=8,
        patience=3,
        seed=0,
        n_features=3,
    ):
        self.d_model = d_model
        self.n_heads = n_heads
        self.e_layers = e_layers
        self.d_layers = d_layers
        self.d_ff = d_ff
        self.seq_len = seq_len
        self.label_len = label_len
        self.pred_len = pred_len
        self.factor = factor
        self.tau = tau
        self.eit_enabled = eit_enabled
        self.zero_init_decoder = zero_init_decoder
        self.dropout = dropout
        self.base_lr = base_lr
        self.lr_decay = lr_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.patience = patience
        self.seed = seed
        self.n_features = n_features

    @classmethod
    def from_config(cls, config):
        return cls(**config.to_dict())

    @property
    def config(self):
        names = {f.name for f in fields(EaseformerConfig)}
        return EaseformerConfig(**{k: v for k, v in self.get_params().items() if k in names})

    # training

    def fit(self, X, y=None, eval_set=None):
        cfg = self.config
        if not isinstance(X, SeriesFrame) or len(X) == 0:
            raise InvalidDataset("training frame is empty")
        self.stats_ = normalize_fit(X)
        self.table_ = eit_transform(X.distance, cfg.tau) if cfg.eit_enabled else None
        try:
            train = make_windows(normalize_apply(self.stats_, X), cfg, self.table_)
        except InsufficientHistory as exc:
            raise InvalidDataset(f"training frame too short: {exc}") from None
        val = None
        if eval_set is not None and len(eval_set):
            val = make_windows(normalize_apply(self.stats_, eval_set), cfg, self.table_)

        init_seq, drop_seq, sample_seq, order_seq = np.random.SeedSequence(cfg.seed).spawn(4)
        model = Easeformer(cfg, np.random.default_rng(init_seq))
        drop_rng = np.random.default_rng(drop_seq)
        for m in model.modules():
            if isinstance(m, nn.Dropout):
                m.rng = drop_rng
        sample_rng = np.random.default_rng(sample_seq)
        order_rng = np.random.default_rng(order_seq)
        opt = nn.Adam(model.parameters(), lr=cfg.base_lr)

        self.history_ = []
        best_loss, best_state, best_epoch, stale = np.inf, model.state_dict(), -1, 0
        for epoch in range(cfg.epochs):
            opt.lr = nn.lr_schedule(epoch, cfg.base_lr, cfg.lr_decay)
            model.train()
            order = order_rng.permutation(len(train))
            losses = []
            for start in range(0, len(order), cfg.batch_size):
                b = train.batch(order[start : start + cfg.batch_size])
                opt.zero_grad()
                loss = nn.mse_loss(model(b.x_en, b.x_de, sample_rng), nn.Tensor(b.y))
                loss.backward()
                opt.step()
                losses.append(loss.item() * len(b))
            train_loss = float(np.sum(losses) / len(train))
            model.eval()
            val_loss = self._loss(model, val) if val is not None else train_loss
            self.history_.append({"epoch": epoch, "lr": opt.lr, "train_mse": train_loss, "val_mse": val_loss})
            log.debug("epoch %d lr=%.3g train=%.5f val=%.5f", epoch, opt.lr, train_loss, val_loss)
            if val_loss < best_loss:
                best_loss, best_state, best_epoch, stale = val_loss, model.state_dict(), epoch, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        model.load_state_dict(best_state)
        model.eval()
        self.model_ = model
        self.best_epoch_ = best_epoch
        self.best_val_mse_ = float(best_loss)
        return self

    @staticmethod
    def _forward(model, inputs):
        out = []
        with nn.no_grad():
            for s in range(0, len(inputs), _EVAL_CHUNK):
                b = inputs.batch(slice(s, s + _EVAL_CHUNK))
                out.append(model(b.x_en, b.x_de).data)
        return np.concatenate(out, axis=0)

    def _loss(self, model, inputs):
        return float(np.mean((self._forward(model, inputs) - inputs.y) ** 2))

    # inference

    def windows(self, frame, starts=None):
        """Normalized model inputs for ``frame`` (raw units)."""
        check_is_fitted(self, "model_")
        return make_windows(normalize_apply(self.stats_, frame), self.config, self.table_, starts=starts)

    def predict_windows(self, frame, starts=None, normalized=False):
        """(predictions, truth) for every window of ``frame``, each (W, pred_len)."""
        inputs = self.windows(frame, starts)
        pred = self._forward(self.model_, inputs)
        if normalized:
            return pred, inputs.y
        return self.stats_.invert_target(pred), self.stats_.invert_target(inputs.y)

    def predict(self, history, distance):
        """Forecast the ``pred_len`` values following ``history`` at sharing ``distance``.

        ``history`` is a raw frame with at least ``seq_len`` rows.
        """
        check_is_fitted(self, "model_")
        cfg = self.config
        if len(history) < cfg.seq_len:
            raise InsufficientHistory(f"need {cfg.seq_len} history rows, got {len(history)}")
        feats = feature_matrix(normalize_apply(self.stats_, history), self.table_)[-cfg.seq_len :]
        x_de = build_decoder_input(
            feats, distance, self.table_, cfg.label_len, cfg.pred_len, zero_init=cfg.zero_init_decoder
        )
        with nn.no_grad():
            out = self.model_(feats, x_de).data
        return self.stats_.invert_target(out)

    def evaluate(self, frame, starts=None):
        """MSE/MAE on normalized targets plus raw-unit (mAh) counterparts."""
        pred, truth = self.predict_windows(frame, starts, normalized=True)
        raw_p, raw_t = self.stats_.invert_target(pred), self.stats_.invert_target(truth)
        return {
            "mse": mse(pred, truth),
            "mae": mae(pred, truth),
            "mse_mAh": mse(raw_p, raw_t),
            "mae_mAh": mae(raw_p, raw_t),
        }

    # persistence

    def save(self, prefix):
        """Write ``<prefix>.npz`` weights and a ``<prefix>.cfg`` key=value sidecar."""
        check_is_fitted(self, "model_")
        nn.save_checkpoint(f"{prefix}.npz", self.model_.state_dict())
        values = {f"model.{k}": v for k, v in self.config.to_dict().items()}
        values.update({f"stats.{k}": v for k, v in vars(self.stats_).items()})
        if self.table_ is not None:
            values["eit.distances"] = ",".join(repr(d) for d in self.table_.distances)
        write_kv(f"{prefix}.cfg", values)

    @classmethod
    def load(cls, prefix):
        values = read_kv(f"{prefix}.cfg")
        cfg = EaseformerConfig.from_dict({k[6:]: v for k, v in values.items() if k.startswith("model.")})
        est = cls.from_config(cfg)
        est.stats_ = NormalizationStats(
            **{k[6:]: float(v) for k, v in values.items() if k.startswith("stats.")}
        )
        est.table_ = None
        if "eit.distances" in values:
            est.table_ = eit_transform([float(x) for x in values["eit.distances"].split(",")], cfg.tau)
        model = Easeformer(cfg, np.random.default_rng(0))
        model.load_state_dict(nn.load_checkpoint(f"{prefix}.npz"))
        est.model_ = model.eval()
        return est


__all__ = ["EaseformerForecaster", "DistancePreferenceTable"]
