"""Self-consumption forecasting with ordinary least squares against time.

Idle drain is assumed stable, so one line per role (provider, consumer)
is fitted on all of that role's idle records pooled together.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .domain import State, UserType
from .exceptions import DegenerateInput, InvalidSeries, ShapeError


@dataclass(frozen=True)
class LinearModel:
    """``y = slope * t + intercept``; slope in mAh per minute."""

    slope: float
    intercept: float

    def __post_init__(self):
        if not (np.isfinite(self.slope) and np.isfinite(self.intercept)):
            raise InvalidSeries("linear coefficients must be finite")

    def predict(self, t):
        return predict_linear(self, t)


def fit_linear(t, y):
    """Closed-form least-squares line through ``(t, y)``."""
    t = np.asarray(t, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if t.shape != y.shape:
        raise ShapeError(f"t has {t.size} values, y has {y.size}")
    if t.size < 2:
        raise DegenerateInput("need at least two points")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
        raise InvalidSeries("t and y must be finite")
    tc = t - t.mean()
    sxx = float(tc @ tc)
    if sxx == 0.0:
        raise DegenerateInput("all time points are identical")
    slope = float(tc @ (y - y.mean())) / sxx
    return LinearModel(slope, float(y.mean() - slope * t.mean()))


def predict_linear(model, t_future):
    return model.slope * np.asarray(t_future, dtype=np.float64) + model.intercept


class LinearUsageRegressor(RegressorMixin, BaseEstimator):
    """Estimator form of :func:`fit_linear`; ``X`` holds times, one column or flat."""

    def fit(self, X, y):
        self.model_ = fit_linear(_times(X), y)
        self.coef_ = np.array([self.model_.slope])
        self.intercept_ = self.model_.intercept
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return predict_linear(self.model_, _times(X))

    def fit_records(self, records, role):
        """Fit on the pooled idle records of ``role`` (usage against minute)."""
        t, y = idle_usage(records, role)
        return self.fit(t, y)


def _times(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ShapeError("regression input must have a single time column")
        X = X[:, 0]
    return X


def idle_usage(records, role):
    """Concatenated (minute, usage) pairs of every idle record of ``role``."""
    role = UserType(role)
    parts = [r for r in records if r.state is State.IDLE and r.role is role]
    if not parts:
        raise DegenerateInput(f"no idle {role.value} records to fit")
    return np.concatenate([r.minutes for r in parts]), np.concatenate([r.derived() for r in parts])
