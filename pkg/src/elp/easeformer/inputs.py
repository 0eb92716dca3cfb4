"""Encoder/decoder input assembly.

Feature columns are fixed: 0 = target (CG or PL), 1 = time, 2 = distance.
Only the distance column carries prior knowledge into the prediction block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import InsufficientHistory, InvalidParam

TARGET, TIME, DISTANCE = 0, 1, 2
PRIOR_COLUMNS = (DISTANCE,)


@dataclass(frozen=True)
class ModelInput:
    """Batched windows: x_en (B, L_x, 3), x_de (B, L_token + L_y, 3), y (B, L_y)."""

    x_en: np.ndarray
    x_de: np.ndarray
    y: np.ndarray
    label_len: int

    def __len__(self):
        return self.x_en.shape[0]

    def batch(self, idx):
        return ModelInput(self.x_en[idx], self.x_de[idx], self.y[idx], self.label_len)


def distance_feature(distances, table=None):
    """Distance channel: preference probabilities when a table is given, else raw cm."""
    distances = np.asarray(distances, dtype=np.float64)
    return distances.copy() if table is None else table.map(distances)


def build_decoder_input(history, d, table, label_len, pred_len, zero_init=False):
    """Start-token block followed by the prediction block.

    ``history`` holds at least ``label_len`` feature rows; the last
    ``label_len`` become the token block. ``d`` is the sharing distance of the
    predicted rows (a scalar, or one value per predicted row). In the
    prediction block the target and time columns are zero and the distance
    column carries the prior, unless ``zero_init`` zeroes it too.
    """
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 2:
        raise InvalidParam("history must be a (rows, features) array")
    if history.shape[0] < label_len:
        raise InsufficientHistory(f"need {label_len} history rows, got {history.shape[0]}")
    token = history[history.shape[0] - label_len :] if label_len else history[:0]
    block = np.zeros((pred_len, history.shape[1]))
    if not zero_init:
        d = np.broadcast_to(np.asarray(d, dtype=np.float64), (pred_len,))
        block[:, DISTANCE] = distance_feature(d, table)
    return np.concatenate([token, block], axis=0)


def feature_matrix(frame, table=None):
    """(N, 3) features of a normalized frame with the distance channel mapped."""
    return np.column_stack([frame.target, frame.time, distance_feature(frame.distance, table)])


def make_windows(frame, config, table=None, stride=1, starts=None):
    """Every window of ``seq_len`` history followed by ``pred_len`` targets.

    ``starts`` overrides the stride with explicit window start rows.
    """
    feats = feature_matrix(frame, table)
    lx, lt, ly = config.seq_len, config.label_len, config.pred_len
    n = feats.shape[0]
    if starts is None:
        starts = range(0, n - lx - ly + 1, stride)
    starts = list(starts)
    if not starts:
        raise InsufficientHistory(f"need at least {lx + ly} rows to form a window, got {n}")
    x_en = np.empty((len(starts), lx, feats.shape[1]))
    x_de = np.empty((len(starts), lt + ly, feats.shape[1]))
    y = np.empty((len(starts), ly))
    zero = config.zero_init_decoder
    for i, s in enumerate(starts):
        if s < 0 or s + lx + ly > n:
            raise InsufficientHistory(f"window starting at row {s} does not fit in {n} rows")
        x_en[i] = feats[s : s + lx]
        x_de[i, :lt] = feats[s + lx - lt : s + lx]
        x_de[i, lt:] = 0.0
        if not zero:
            x_de[i, lt:, DISTANCE] = feats[s + lx : s + lx + ly, DISTANCE]
        y[i] = feats[s + lx : s + lx + ly, TARGET]
    return ModelInput(x_en, x_de, y, lt)


def session_starts(frame, config):
    """Window starts whose prediction block is exactly one whole session."""
    boundaries = np.flatnonzero(np.diff(frame.session) != 0) + 1
    candidates = np.concatenate([[0], boundaries])
    return [int(b) - config.seq_len for b in candidates if b >= config.seq_len and b + config.pred_len <= len(frame)]
