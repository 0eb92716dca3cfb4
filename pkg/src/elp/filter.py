"""Density-based removal of abnormal sharing sessions.

Only the final state of each session matters: the last provider-loss value
and the last consumer-gain value. Each role's finals are clustered on their
own; a session whose provider or consumer final lands in noise is dropped
together with its partner record.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .dataio import session_id
from .domain import State, UserEnergyProfile, UserType
from .exceptions import InvalidInput, InvalidParam, PairingError

NOISE = -1


@dataclass(frozen=True)
class DbscanParams:
    """``eps`` is measured in min-max normalized units; ``min_pts`` counts the point itself.

    ``eps=inf`` with ``min_pts=1`` turns filtering off.
    """

    eps: float = 0.15
    min_pts: int = 4

    def __post_init__(self):
        if np.isnan(self.eps) or self.eps <= 0:
            raise InvalidParam("eps must be positive")
        if int(self.min_pts) != self.min_pts or self.min_pts < 1:
            raise InvalidParam("min_pts must be an integer >= 1")


def _as_points(points):
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if pts.ndim != 2:
        raise InvalidInput("points must be a 1-D or 2-D array")
    if not np.all(np.isfinite(pts)):
        raise InvalidInput("points must be finite")
    return pts


def _neighborhoods(pts, eps):
    """Index arrays of every point's eps-neighborhood (itself included)."""
    out = []
    # row blocks keep the pairwise difference tensor small for large inputs
    step = max(1, 2**20 // max(1, pts.size))
    for lo in range(0, len(pts), step):
        diff = pts[lo : lo + step, None, :] - pts[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        out.extend(np.flatnonzero(row) for row in dist <= eps)
    return out


def dbscan(points, params=None):
    """Cluster labels (0, 1, ...) per point; ``NOISE`` (-1) for noise.

    Points are visited in input order, so cluster ids and the cluster a
    shared border point joins are deterministic.
    """
    params = params or DbscanParams()
    pts = _as_points(points)
    n = len(pts)
    labels = np.full(n, NOISE, dtype=int)
    if n == 0:
        return labels
    neighbors = _neighborhoods(pts, params.eps)
    core = np.array([len(nb) >= params.min_pts for nb in neighbors])
    visited = np.zeros(n, dtype=bool)
    cluster = 0
    for i in range(n):
        if visited[i] or not core[i]:
            continue
        visited[i] = True
        labels[i] = cluster
        queue = deque([i])
        while queue:
            j = queue.popleft()
            for k in neighbors[j]:
                if labels[k] == NOISE:
                    labels[k] = cluster
                if core[k] and not visited[k]:
                    visited[k] = True
                    queue.append(k)
        cluster += 1
    return labels


class DensityClusterer(ClusterMixin, BaseEstimator):
    """Estimator wrapper around :func:`dbscan`."""

    def __init__(self, eps=0.15, min_pts=4):
        self.eps = eps
        self.min_pts = min_pts

    def fit(self, X, y=None):
        params = DbscanParams(self.eps, self.min_pts)
        self.labels_ = dbscan(X, params)
        return self

    @property
    def noise_mask_(self):
        return self.labels_ == NOISE


@dataclass(frozen=True)
class MinMaxStats:
    """Shared range used to map both roles' final values into [0, 1]."""

    low: float
    high: float

    @classmethod
    def fit(cls, *arrays):
        values = np.concatenate([np.ravel(a) for a in arrays]) if arrays else np.zeros(0)
        if values.size == 0:
            return cls(0.0, 1.0)
        return cls(float(values.min()), float(values.max()))

    def transform(self, values):
        values = np.asarray(values, dtype=np.float64)
        span = self.high - self.low
        if span <= 0:
            return np.zeros_like(values)
        return (values - self.low) / span


@dataclass
class FilterReport:
    """Outcome of a filtering pass; ids are session ids in input order."""

    kept_record_ids: list[str] = field(default_factory=list)
    outlier_record_ids: list[str] = field(default_factory=list)
    points_removed: int = 0
    stats: MinMaxStats | None = None
    provider_labels: np.ndarray | None = None
    consumer_labels: np.ndarray | None = None

    @property
    def n_kept(self):
        return len(self.kept_record_ids)

    @property
    def n_outliers(self):
        return len(self.outlier_record_ids)

    def summary_lines(self):
        return [
            f"sessions_kept={self.n_kept}",
            f"sessions_removed={self.n_outliers}",
            f"points_removed={self.points_removed}",
            "removed_ids=" + ",".join(self.outlier_record_ids),
        ]


def _pair_sessions(provider_records, consumer_records):
    """Provider/consumer sharing records matched by session id, in provider order."""
    consumers = {}
    for rec in consumer_records:
        if rec.state is not State.SHARING:
            continue
        if rec.role is not UserType.CONSUMER:
            raise PairingError(f"record {rec.rid} is not a consumer record")
        sid = session_id(rec)
        if sid in consumers:
            raise PairingError(f"session {sid} has two consumer records")
        consumers[sid] = rec
    pairs = []
    seen = set()
    for rec in provider_records:
        if rec.state is not State.SHARING:
            continue
        if rec.role is not UserType.PROVIDER:
            raise PairingError(f"record {rec.rid} is not a provider record")
        sid = session_id(rec)
        if sid in seen:
            raise PairingError(f"session {sid} has two provider records")
        if sid not in consumers:
            raise PairingError(f"session {sid} has no consumer record")
        seen.add(sid)
        pairs.append((sid, rec, consumers[sid]))
    missing = [sid for sid in consumers if sid not in seen]
    if missing:
        raise PairingError(f"session {missing[0]} has no provider record")
    return pairs


def filter_sessions(provider_records, consumer_records, params=None, stats=None):
    """Drop sessions whose final provider loss or consumer gain is density noise.

    Returns ``(provider_profile, consumer_profile, report)``. Idle records
    pass through untouched. ``stats`` fixes the normalization range, which
    makes a second pass over already-clean data a no-op.
    """
    params = params or DbscanParams()
    provider_records = list(provider_records)
    consumer_records = list(consumer_records)
    pairs = _pair_sessions(provider_records, consumer_records)
    pl_final = np.array([p.derived()[-1] for _, p, _ in pairs])
    cg_final = np.array([c.derived()[-1] for _, _, c in pairs])
    if stats is None:
        stats = MinMaxStats.fit(pl_final, cg_final)
    pl_labels = dbscan(stats.transform(pl_final), params)
    cg_labels = dbscan(stats.transform(cg_final), params)
    bad = (pl_labels == NOISE) | (cg_labels == NOISE)

    report = FilterReport(stats=stats, provider_labels=pl_labels, consumer_labels=cg_labels)
    provider = UserEnergyProfile(UserType.PROVIDER)
    consumer = UserEnergyProfile(UserType.CONSUMER)
    for (sid, p, c), drop in zip(pairs, bad):
        if drop:
            report.outlier_record_ids.append(sid)
            report.points_removed += len(p) + len(c)
        else:
            report.kept_record_ids.append(sid)
            provider.sharing.append(p)
            consumer.sharing.append(c)
    provider.idle.extend(r for r in provider_records if r.state is State.IDLE)
    consumer.idle.extend(r for r in consumer_records if r.state is State.IDLE)
    return provider, consumer, report


def filter_records(records, params=None, stats=None):
    """Filter a mixed record list; kept records stay in their original order."""
    records = list(records)
    providers = [r for r in records if r.role is UserType.PROVIDER]
    consumers = [r for r in records if r.role is UserType.CONSUMER]
    _, _, report = filter_sessions(providers, consumers, params, stats)
    dropped = set(report.outlier_record_ids)
    kept = [r for r in records if session_id(r) not in dropped]
    return kept, report
