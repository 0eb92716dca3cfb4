"""Energy bookkeeping for wireless sharing sessions.

Battery levels are mAh, timestamps are minute indices. Every difference is
signed and never clamped: anomalous sessions must reach the filter intact.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidSeries, ShapeError

__all__ = [
    "State",
    "UserType",
    "EnergyHistoryRecord",
    "UserEnergyProfile",
    "EnergyFlow",
    "consumer_gain",
    "consumer_usage",
    "provider_loss",
    "provider_usage",
    "real_transferred",
    "real_received",
    "energy_loss",
    "mse",
    "mae",
]


class State(str, enum.Enum):
    SHARING = "sharing"
    IDLE = "idle"


class UserType(str, enum.Enum):
    CONSUMER = "consumer"
    PROVIDER = "provider"


def _series(values, name="series"):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidSeries(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise InvalidSeries(f"{name} is empty")
    return arr


def _pair(a, b, names):
    a = _series(a, names[0])
    b = _series(b, names[1])
    if a.shape != b.shape:
        raise ShapeError(f"{names[0]} has length {a.size} but {names[1]} has length {b.size}")
    return a, b


@dataclass(frozen=True)
class EnergyHistoryRecord:
    """One session's battery trace.

    ``role`` is meaningful for both states: an idle record still belongs to
    a provider or a consumer device. ``distance_cm`` is ``None`` for idle
    records.
    """

    rid: str
    uid: str
    state: State
    role: UserType
    minutes: np.ndarray
    levels: np.ndarray
    distance_cm: float | None = None
    mt: float = 1.0

    def __post_init__(self):
        state = State(self.state)
        role = UserType(self.role)
        object.__setattr__(self, "state", state)
        object.__setattr__(self, "role", role)
        minutes = np.asarray(self.minutes, dtype=np.float64)
        levels = _series(self.levels, "battery levels")
        if minutes.shape != levels.shape:
            raise ShapeError("minutes and battery levels differ in length")
        if not np.all(np.isfinite(levels)) or np.any(levels < 0):
            raise InvalidSeries(f"record {self.rid}: battery levels must be finite and >= 0")
        steps = np.diff(minutes)
        if steps.size and not np.allclose(steps, self.mt):
            raise InvalidSeries(f"record {self.rid}: timestamps must increase by mt={self.mt}")
        if state is State.SHARING:
            if self.distance_cm is None or not np.isfinite(self.distance_cm) or self.distance_cm < 0:
                raise InvalidSeries(f"record {self.rid}: sharing records need a distance")
        elif self.distance_cm is not None:
            raise InvalidSeries(f"record {self.rid}: idle records carry no distance")
        minutes.setflags(write=False)
        levels.setflags(write=False)
        object.__setattr__(self, "minutes", minutes)
        object.__setattr__(self, "levels", levels)

    def __len__(self):
        return self.levels.size

    @property
    def is_monotone_consistent(self):
        """False when a sharing trace moves against its role's direction."""
        if self.state is State.IDLE:
            return True
        steps = np.diff(self.levels)
        if self.role is UserType.CONSUMER:
            return bool(np.all(steps >= 0))
        return bool(np.all(steps <= 0))

    def derived(self):
        """Gain, loss or usage series for this record, per its role and state."""
        if self.state is State.SHARING:
            if self.role is UserType.CONSUMER:
                return consumer_gain(self.levels)
            return provider_loss(self.levels)
        if self.role is UserType.CONSUMER:
            return consumer_usage(self.levels)
        return provider_usage(self.levels)


@dataclass
class UserEnergyProfile:
    """All sharing and idle records of one role."""

    role: UserType
    sharing: list[EnergyHistoryRecord] = field(default_factory=list)
    idle: list[EnergyHistoryRecord] = field(default_factory=list)

    def __post_init__(self):
        self.role = UserType(self.role)
        for rec in [*self.sharing, *self.idle]:
            if rec.role is not self.role:
                raise InvalidSeries(f"record {rec.rid} has role {rec.role.value}, profile is {self.role.value}")

    @property
    def sharing_derived(self):
        """CG (consumer) or PL (provider) per sharing record."""
        return [rec.derived() for rec in self.sharing]

    @property
    def idle_derived(self):
        """CU (consumer) or PU (provider) per idle record."""
        return [rec.derived() for rec in self.idle]

    @property
    def distances(self):
        return np.array([rec.distance_cm for rec in self.sharing], dtype=np.float64)

    @property
    def times(self):
        return [rec.minutes for rec in self.sharing]


@dataclass(frozen=True)
class EnergyFlow:
    rt: np.ndarray
    rr: np.ndarray
    el: np.ndarray

    @classmethod
    def from_components(cls, pl, pu, cg, cu):
        rt = real_transferred(pl, pu)
        rr = real_received(cg, cu)
        return cls(rt=rt, rr=rr, el=energy_loss(rt, rr))


def consumer_gain(cb):
    cb = _series(cb, "consumer battery")
    return cb - cb[0]


def consumer_usage(ncb):
    ncb = _series(ncb, "consumer idle battery")
    return ncb[0] - ncb


def provider_loss(pb):
    pb = _series(pb, "provider battery")
    return pb[0] - pb


def provider_usage(npb):
    npb = _series(npb, "provider idle battery")
    return npb[0] - npb


def real_transferred(pl, pu):
    pl, pu = _pair(pl, pu, ("provider loss", "provider usage"))
    return pl - pu


def real_received(cg, cu):
    cg, cu = _pair(cg, cu, ("consumer gain", "consumer usage"))
    return cg + cu


def energy_loss(rt, rr):
    rt, rr = _pair(rt, rr, ("real transferred", "real received"))
    return rt - rr


def mse(pred, truth):
    pred, truth = _pair(np.ravel(pred), np.ravel(truth), ("prediction", "truth"))
    return float(np.mean((pred - truth) ** 2))


def mae(pred, truth):
    pred, truth = _pair(np.ravel(pred), np.ravel(truth), ("prediction", "truth"))
    return float(np.mean(np.abs(pred - truth)))
