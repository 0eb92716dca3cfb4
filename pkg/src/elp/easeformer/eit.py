"""Encoder Input Transformer: distances to a preference distribution.

Unique distances are min-max scaled to [0, 1] and passed through a softmax
with temperature ``tau``; longer distances receive higher probability.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..exceptions import InvalidParam

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DistancePreferenceTable:
    distances: tuple
    normalized: tuple
    probabilities: tuple
    tau: float

    def as_dict(self):
        return dict(zip(self.distances, self.probabilities))

    def lookup(self, d):
        """Probability for distance ``d``; unseen distances use the nearest known one."""
        known = np.asarray(self.distances)
        i = int(np.argmin(np.abs(known - d)))
        if known[i] != d:
            log.warning("distance %s cm not in preference table; using %s cm", d, known[i])
        return self.probabilities[i]

    def __getitem__(self, d):
        return self.lookup(d)

    def map(self, distances):
        distances = np.asarray(distances, dtype=np.float64)
        out = np.empty_like(distances)
        for d in np.unique(distances):
            out[distances == d] = self.lookup(float(d))
        return out


def eit_transform(distances, tau=0.85):
    if tau <= 0 or not np.isfinite(tau):
        raise InvalidParam("temperature must be positive")
    unique = np.unique(np.asarray(distances, dtype=np.float64))
    if unique.size == 0:
        raise InvalidParam("need at least one distance")
    span = unique[-1] - unique[0]
    scaled = (unique - unique[0]) / span if span > 0 else np.zeros_like(unique)
    logits = scaled / tau
    e = np.exp(logits - logits.max())
    probs = e / e.sum()
    return DistancePreferenceTable(
        distances=tuple(float(x) for x in unique),
        normalized=tuple(float(x) for x in scaled),
        probabilities=tuple(float(x) for x in probs),
        tau=float(tau),
    )


class EncoderInputTransformer(TransformerMixin, BaseEstimator):
    """Learns the preference table from training distances; maps distances to probabilities."""

    def __init__(self, tau=0.85):
        self.tau = tau

    def fit(self, X, y=None):
        self.table_ = eit_transform(np.ravel(X), self.tau)
        return self

    def transform(self, X):
        check_is_fitted(self, "table_")
        return self.table_.map(X)
