"""Session logs: CSV ingestion, synthetic generation, splitting, normalization.

CSV layout (UTF-8, comma separated, header mandatory, this column order)::

    session_id,role,state,distance_cm,minute_index,battery_mAh

``distance_cm`` is empty for idle rows. Minute indices run contiguously from
0 for every (session_id, role).
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .domain import EnergyHistoryRecord, State, UserType
from .exceptions import GapError, InvalidParam, InvalidSeries, ParseError

COLUMNS = ("session_id", "role", "state", "distance_cm", "minute_index", "battery_mAh")


# key=value files


def read_kv(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}: expected key = value", row=lineno)
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def write_kv(path, values):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in values.items():
            fh.write(f"{key} = {_kv_format(value)}\n")


def _kv_format(value):
    if isinstance(value, dict):
        return ",".join(f"{k:g}:{v}" for k, v in value.items())
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_counts(text):
    counts = {}
    for part in text.split(","):
        d, n = part.split(":")
        counts[float(d)] = int(n)
    return counts


# CSV ingestion


def percent_to_mah(levels, capacity_mah):
    """Convert battery percentages to mAh for a device of the given capacity."""
    return np.asarray(levels, dtype=np.float64) / 100.0 * capacity_mah


def load_sessions(path, mt=1.0):
    """Read and validate a session log; records come back in first-seen order."""
    groups = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: missing header", row=1)
        if tuple(h.strip() for h in header) != COLUMNS:
            raise ParseError(f"{path}: header must be {','.join(COLUMNS)}", row=1)
        for rowno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(COLUMNS):
                raise ParseError(f"expected {len(COLUMNS)} fields, got {len(row)}", row=rowno)
            sid, role, state, dist, minute, level = (x.strip() for x in row)
            try:
                role = UserType(role)
                state = State(state)
                minute = int(minute)
                level = float(level)
                dist = float(dist) if dist else None
            except ValueError as exc:
                raise ParseError(str(exc), row=rowno) from None
            if not sid:
                raise ParseError("empty session_id", row=rowno)
            if not math.isfinite(level) or level < 0:
                raise ParseError("battery level must be finite and >= 0", row=rowno)
            if (state is State.SHARING) != (dist is not None):
                raise ParseError("distance_cm must be set exactly for sharing rows", row=rowno)
            key = (sid, role)
            g = groups.setdefault(key, {"state": state, "dist": dist, "rows": {}, "first": rowno})
            if g["state"] is not state or g["dist"] != dist:
                raise ParseError(f"session {sid}/{role.value} mixes states or distances", row=rowno)
            if minute in g["rows"]:
                raise ParseError(f"duplicate minute {minute} for {sid}/{role.value}", row=rowno)
            g["rows"][minute] = level
    records = []
    for (sid, role), g in groups.items():
        minutes = sorted(g["rows"])
        if minutes != list(range(len(minutes))):
            raise GapError(f"minutes for {sid}/{role.value} are not contiguous from 0", row=g["first"])
        levels = [g["rows"][m] for m in minutes]
        try:
            records.append(
                EnergyHistoryRecord(
                    rid=f"{sid}:{role.value}",
                    uid=role.value,
                    state=g["state"],
                    role=role,
                    minutes=np.asarray(minutes, dtype=np.float64) * mt,
                    levels=levels,
                    distance_cm=g["dist"],
                    mt=mt,
                )
            )
        except InvalidSeries as exc:
            raise ParseError(str(exc), row=g["first"]) from None
    return records


def session_id(record):
    return record.rid.rsplit(":", 1)[0]


def write_sessions(records, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for rec in records:
            dist = "" if rec.distance_cm is None else repr(float(rec.distance_cm))
            for minute, level in zip(rec.minutes, rec.levels):
                w.writerow(
                    [session_id(rec), rec.role.value, rec.state.value, dist,
                     int(round(minute / rec.mt)), repr(float(level))]
                )


# synthetic generator


@dataclass(frozen=True)
class GeneratorConfig:
    """Parameters of the synthetic session generator.

    Each sharing session pairs one provider and one consumer trace. Per
    minute the consumer gains ``transfer_rate`` and the provider loses
    ``transfer_rate / efficiency(d) + provider_drain``, both with Gaussian
    increment noise. Anomalous sessions multiply the provider's transfer
    term by ``anomaly_factor``.
    """

    distance_counts: dict = field(default_factory=lambda: {1.0: 7, 1.5: 14, 2.0: 21})
    session_minutes: int = 30
    mt: float = 1.0
    transfer_rate: float = 3.5
    provider_drain: float = 0.05
    efficiency_slope: float = 0.25
    efficiency_floor: float = 0.3
    noise_sigma: float = 0.2
    anomaly_count: int = 6
    anomaly_factor: float = 3.0
    idle_sessions: int = 5
    idle_minutes: int = 30
    provider_idle_drain: float = 0.4
    consumer_idle_drain: float = 0.3
    idle_noise: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if any(n < 0 for n in self.distance_counts.values()) or self.anomaly_count < 0 or self.idle_sessions < 0:
            raise InvalidParam("counts must be >= 0")
        if self.anomaly_count > sum(self.distance_counts.values()):
            raise InvalidParam("more anomalies than sessions")
        if self.session_minutes < 1 or self.idle_minutes < 1:
            raise InvalidParam("session lengths must be >= 1")
        for d in self.distance_counts:
            if not 0 < self.efficiency(d) <= 1:
                raise InvalidParam("efficiency must lie in (0, 1]")

    def efficiency(self, d):
        return min(max(1.0 - self.efficiency_slope * (d - 1.0), self.efficiency_floor), 1.0)

    @property
    def n_sessions(self):
        return sum(self.distance_counts.values())

    @property
    def sharing_points(self):
        return 2 * self.n_sessions * self.session_minutes

    @property
    def idle_points(self):
        return 2 * self.idle_sessions * self.idle_minutes

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        known = {f.name: f for f in fields(cls)}
        out = {}
        for key, raw in values.items():
            if key not in known:
                raise InvalidParam(f"unknown generator option {key!r}")
            if not isinstance(raw, str):
                out[key] = raw
            elif key == "distance_counts":
                out[key] = _parse_counts(raw)
            elif known[key].type in ("int", int):
                out[key] = int(raw)
            else:
                out[key] = float(raw)
        return cls(**out)

    def replace(self, **changes):
        return replace(self, **changes)


def largest_remainder(total, weights):
    """Integer apportionment of ``total``; ties go to the later position."""
    weights = np.asarray(weights, dtype=np.float64)
    if total == 0 or weights.sum() == 0:
        return [0] * len(weights)
    quotas = total * weights / weights.sum()
    base = np.floor(quotas + 1e-12).astype(int)
    rem = quotas - base
    order = sorted(range(len(weights)), key=lambda i: (-round(rem[i], 12), -i))
    for i in order[: total - base.sum()]:
        base[i] += 1
    return [int(x) for x in base]


def generate_synthetic(config=None):
    """Sharing sessions in a shuffled collection order, then idle sessions."""
    cfg = config or GeneratorConfig()
    rng = np.random.default_rng(cfg.seed)
    distances = sorted(cfg.distance_counts)
    counts = [cfg.distance_counts[d] for d in distances]
    anomalies_per = largest_remainder(cfg.anomaly_count, counts)
    labels = np.repeat(distances, counts)
    anomalous = np.zeros(labels.size, dtype=bool)
    start = 0
    for n, k in zip(counts, anomalies_per):
        if k:
            anomalous[start + rng.choice(n, size=k, replace=False)] = True
        start += n
    order = rng.permutation(labels.size)
    labels, anomalous = labels[order], anomalous[order]

    n = cfg.session_minutes
    minutes = np.arange(n, dtype=np.float64) * cfg.mt
    records = []
    for i, (d, bad) in enumerate(zip(labels, anomalous)):
        sid = f"s{i:03d}"
        factor = cfg.anomaly_factor if bad else 1.0
        p_step = factor * cfg.transfer_rate / cfg.efficiency(d) + cfg.provider_drain
        p_start = rng.uniform(2500.0, 4000.0)
        c_start = rng.uniform(500.0, 1500.0)
        p_noise = rng.normal(0.0, cfg.noise_sigma, n - 1)
        c_noise = rng.normal(0.0, cfg.noise_sigma, n - 1)
        provider = p_start - np.concatenate([[0.0], np.cumsum(p_step + p_noise)])
        consumer = c_start + np.concatenate([[0.0], np.cumsum(cfg.transfer_rate + c_noise)])
        for role, levels in ((UserType.PROVIDER, provider), (UserType.CONSUMER, consumer)):
            records.append(
                EnergyHistoryRecord(
                    rid=f"{sid}:{role.value}", uid=role.value, state=State.SHARING, role=role,
                    minutes=minutes, levels=levels, distance_cm=float(d), mt=cfg.mt,
                )
            )
    idle_minutes = np.arange(cfg.idle_minutes, dtype=np.float64) * cfg.mt
    for j in range(cfg.idle_sessions):
        sid = f"i{j:03d}"
        for role, drain, lo, hi in (
            (UserType.PROVIDER, cfg.provider_idle_drain, 2500.0, 4000.0),
            (UserType.CONSUMER, cfg.consumer_idle_drain, 500.0, 1500.0),
        ):
            # noise on every reading after the first, so usage = drain * t + noise exactly
            noise = np.concatenate([[0.0], rng.normal(0.0, cfg.idle_noise, idle_minutes.size - 1)])
            levels = rng.uniform(lo, hi) - drain * idle_minutes - noise
            records.append(
                EnergyHistoryRecord(
                    rid=f"{sid}:{role.value}", uid=role.value, state=State.IDLE, role=role,
                    minutes=idle_minutes, levels=levels, mt=cfg.mt,
                )
            )
    return records


# splitting


def split(records, fractions=(0.5, 0.25, 0.25), seed=0):
    """Session-level train/val/test split.

    Sessions are grouped into strata (one per sharing distance, one for idle
    sessions); each stratum is apportioned by largest remainder and cut
    chronologically, i.e. in collection order. The split contains no
    randomness, so ``seed`` only exists for interface symmetry.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidParam("fractions must be three non-negative numbers summing to 1")
    sessions = {}
    for rec in records:
        sessions.setdefault(session_id(rec), []).append(rec)
    strata = defaultdict(list)
    for sid, recs in sessions.items():
        first = recs[0]
        key = ("idle",) if first.state is State.IDLE else ("sharing", first.distance_cm)
        strata[key].append(sid)
    assignment = {}
    for sids in strata.values():
        sizes = largest_remainder(len(sids), fractions)
        bounds = np.cumsum([0] + sizes)
        for part in range(3):
            for sid in sids[bounds[part] : bounds[part + 1]]:
                assignment[sid] = part
    out = ([], [], [])
    for rec in records:
        out[assignment[session_id(rec)]].append(rec)
    return out


# model-ready frames and normalization


@dataclass(frozen=True)
class SeriesFrame:
    """Flattened per-minute rows of consecutive sharing sessions of one role."""

    target: np.ndarray
    time: np.ndarray
    distance: np.ndarray
    session: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        n = len(self.target)
        for name in ("time", "distance", "session"):
            if len(getattr(self, name)) != n:
                raise InvalidSeries(f"{name} column length differs from target")

    def __len__(self):
        return len(self.target)

    @property
    def n_sessions(self):
        return len(np.unique(self.session)) if len(self) else 0

    @classmethod
    def from_records(cls, records, role):
        """Concatenate sharing records of ``role`` in the given order (PL or CG targets)."""
        role = UserType(role)
        parts = [r for r in records if r.state is State.SHARING and r.role is role]
        if not parts:
            empty = np.zeros(0)
            return cls(empty, empty, empty, np.zeros(0, dtype=int))
        return cls(
            target=np.concatenate([r.derived() for r in parts]),
            time=np.concatenate([r.minutes for r in parts]),
            distance=np.concatenate([np.full(len(r), r.distance_cm) for r in parts]),
            session=np.concatenate([np.full(len(r), i) for i, r in enumerate(parts)]),
        )

    @classmethod
    def from_arrays(cls, target, time, distance, session=None):
        target = np.asarray(target, dtype=np.float64)
        session = np.zeros(len(target), dtype=int) if session is None else np.asarray(session)
        return cls(target, np.asarray(time, dtype=np.float64), np.asarray(distance, dtype=np.float64), session)


@dataclass(frozen=True)
class NormalizationStats:
    target_mean: float
    target_std: float
    time_mean: float
    time_std: float

    def invert_target(self, values):
        return np.asarray(values) * self.target_std + self.target_mean

    def scale_target(self, values):
        return (np.asarray(values) - self.target_mean) / self.target_std


def _std(x):
    s = float(np.std(x))
    return s if s > 0 else 1.0


def normalize_fit(frame):
    """Zero-mean, unit-variance statistics for the target and time channels."""
    if frame.normalized:
        raise InvalidParam("statistics must be fitted on raw data")
    if len(frame) == 0:
        raise InvalidParam("cannot fit normalization on an empty frame")
    return NormalizationStats(
        target_mean=float(np.mean(frame.target)),
        target_std=_std(frame.target),
        time_mean=float(np.mean(frame.time)),
        time_std=_std(frame.time),
    )


def normalize_apply(stats, frame):
    """Normalize target and time; the distance column passes through untouched."""
    if frame.normalized:
        raise InvalidParam("frame is already normalized")
    return SeriesFrame(
        target=stats.scale_target(frame.target),
        time=(frame.time - stats.time_mean) / stats.time_std,
        distance=frame.distance,
        session=frame.session,
        normalized=True,
    )
