"""End-to-end energy-loss prediction and the model comparison grid.

The prediction chain runs in phases: filter abnormal sessions, split,
train the two sharing-state forecasters (provider loss, consumer gain) and
the two self-consumption lines, integrate them into transferred and
received energy, and estimate the loss as their difference.
"""

from __future__ import annotations

import contextlib
import csv
import io
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .dataio import SeriesFrame, session_id, split
from .domain import (
    UserEnergyProfile,
    UserType,
    energy_loss,
    mae,
    mse,
    real_received,
    real_transferred,
)
from .easeformer import MODE_LABELS, MODES, EaseformerConfig, EaseformerForecaster
from .easeformer.inputs import session_starts
from .exceptions import ELPError, InsufficientHistory, InvalidParam, PhaseError
from .filter import DbscanParams, filter_sessions
from .regression import LinearUsageRegressor, idle_usage

log = logging.getLogger(__name__)

TARGETS = {"provider": UserType.PROVIDER, "consumer": UserType.CONSUMER}
TARGET_LABELS = {"provider": "provider_loss", "consumer": "consumer_gain"}
L_TOKENS = (30, 60, 90)

# published figures, shown for context only; the data behind them is private
REFERENCE_NOTES = (
    "Informer, L_token=90, provider loss: MSE 0.0898",
    "Easeformer, L_token=30, provider loss: MSE 0.1104, MAE 0.1711",
    "ELP energy loss: MSE mean 0.11676, std 0.02591",
    "Linear regression, provider usage: MSE 0.00057",
)


@contextlib.contextmanager
def _phase(name):
    """Tag failures with the phase they happened in.

    Package errors keep their type and gain a ``phase`` attribute; anything
    else is wrapped in :class:`PhaseError`.
    """
    try:
        yield
    except ELPError as exc:
        if getattr(exc, "phase", None) is None:
            exc.phase = name
        raise
    except (ValueError, ArithmeticError) as exc:
        raise PhaseError(name, exc) from exc


def phase_message(exc):
    """Single-line ``[phase] Type: message`` description of a pipeline error."""
    if isinstance(exc, PhaseError):
        return str(exc)
    phase = getattr(exc, "phase", None) or "run"
    return f"[{phase}] {type(exc).__name__}: {exc}"


# prediction bundle


@dataclass(frozen=True)
class PredictionBundle:
    """Predicted components of one session and the losses derived from them."""

    pl_hat: np.ndarray
    pu_hat: np.ndarray
    cg_hat: np.ndarray
    cu_hat: np.ndarray
    rt_hat: np.ndarray
    rr_hat: np.ndarray
    el_hat: np.ndarray

    @classmethod
    def from_components(cls, pl, pu, cg, cu):
        rt = real_transferred(pl, pu)
        rr = real_received(cg, cu)
        return cls(
            np.asarray(pl, dtype=np.float64),
            np.asarray(pu, dtype=np.float64),
            np.asarray(cg, dtype=np.float64),
            np.asarray(cu, dtype=np.float64),
            rt,
            rr,
            energy_loss(rt, rr),
        )

    def __len__(self):
        return len(self.el_hat)


@dataclass(frozen=True)
class ElpConfig:
    model: EaseformerConfig = field(default_factory=EaseformerConfig.desk)
    dbscan: DbscanParams = field(default_factory=DbscanParams)
    fractions: tuple = (0.5, 0.25, 0.25)


# perfect predictors, for substitution tests and sanity runs


class TruthForecaster(BaseEstimator):
    """Returns the true future values of each window (a perfect sharing-state model)."""

    def __init__(self, seq_len=90, pred_len=30):
        self.seq_len = seq_len
        self.pred_len = pred_len

    def fit(self, X, y=None, eval_set=None):
        self.fitted_ = True
        return self

    def predict_windows(self, frame, starts=None, normalized=False):
        n = len(frame)
        if starts is None:
            starts = range(0, n - self.seq_len - self.pred_len + 1)
        truth = np.array([frame.target[s + self.seq_len : s + self.seq_len + self.pred_len] for s in starts])
        return truth, truth.copy()


class TruthUsage(BaseEstimator):
    """Predicts the held-out idle usage curve exactly (a perfect self-consumption model)."""

    def __init__(self, curve):
        self.curve = curve

    def fit(self, X, y=None):
        self.fitted_ = True
        return self

    def predict(self, t):
        return self.curve(t)


def _is_fitted(model):
    try:
        check_is_fitted(model)
    except (NotFittedError, TypeError):
        return False
    return True


# data preparation


@dataclass
class PreparedData:
    """Filtered, split records plus the filter report."""

    filter_report: object
    train: list
    val: list
    test: list

    def frame(self, part, role):
        return SeriesFrame.from_records(getattr(self, part), role)


def _records_of(source):
    if isinstance(source, UserEnergyProfile):
        return [*source.sharing, *source.idle]
    return list(source)


def prepare(provider, consumer, config=None, apply_filter=True):
    """Filter and split. ``provider``/``consumer`` are profiles or record lists.

    ``apply_filter=False`` skips outlier removal for data that was filtered
    before (pairing is still checked).
    """
    config = config or ElpConfig()
    with _phase("filter"):
        params = config.dbscan if apply_filter else DbscanParams(eps=np.inf, min_pts=1)
        prov, cons, report = filter_sessions(_records_of(provider), _records_of(consumer), params)
    with _phase("split"):
        # interleave the partners so both roles of a session land in the same split
        by_session = {}
        for rec in [*prov.sharing, *cons.sharing, *prov.idle, *cons.idle]:
            by_session.setdefault(session_id(rec), []).append(rec)
        records = [r for recs in by_session.values() for r in recs]
        train, val, test = split(records, config.fractions)
    return PreparedData(report, train, val, test)


def usage_curve(records, role):
    """Mean observed usage per minute over the idle records of ``role``."""
    t, y = idle_usage(records, role)
    minutes = np.unique(t)
    means = np.array([y[t == m].mean() for m in minutes])

    def curve(query):
        query = np.asarray(query, dtype=np.float64)
        idx = np.searchsorted(minutes, query)
        ok = (idx < minutes.size) & (minutes[np.minimum(idx, minutes.size - 1)] == query)
        if not np.all(ok):
            raise InsufficientHistory("idle records do not cover every predicted minute")
        return means[idx]

    return curve


# the prediction chain


@dataclass
class ElpResult:
    """Per-session predictions and truths for the test split, plus metrics."""

    bundles: list
    truths: list
    minutes: list
    filter_report: object
    metrics: dict
    components: dict

    def series_rows(self):
        """(session, minute_index, truth, prediction) of the energy-loss forecasts."""
        rows = []
        for w, (b, t, m) in enumerate(zip(self.bundles, self.truths, self.minutes)):
            rows.extend((w, int(mi), float(tv), float(pv)) for mi, tv, pv in zip(m, t.el_hat, b.el_hat))
        return rows


def _default_components(config):
    return {
        "pl": EaseformerForecaster.from_config(config.model),
        "cg": EaseformerForecaster.from_config(config.model),
        "pu": LinearUsageRegressor(),
        "cu": LinearUsageRegressor(),
    }


def fit_components(data, config=None, components=None):
    """Fit every component that is not fitted yet; returns the component dict."""
    config = config or ElpConfig()
    comps = {**_default_components(config), **(components or {})}
    with _phase("train"):
        for key, role in (("pl", "provider"), ("cg", "consumer")):
            if not _is_fitted(comps[key]):
                comps[key].fit(data.frame("train", role), eval_set=data.frame("val", role))
        for key, role in (("pu", "provider"), ("cu", "consumer")):
            if not _is_fitted(comps[key]):
                comps[key].fit(*idle_usage(data.train, role))
    return comps


def estimate(data, components, config=None):
    """Predict every whole test session and score the energy-loss estimate."""
    config = config or ElpConfig()
    cfg = config.model
    with _phase("predict"):
        pl_frame = data.frame("test", "provider")
        cg_frame = data.frame("test", "consumer")
        starts = session_starts(pl_frame, cfg)
        if not starts:
            raise InsufficientHistory(
                f"the test split needs more than {cfg.seq_len} rows before a session boundary"
            )
        pl_hat, pl_true = components["pl"].predict_windows(pl_frame, starts)
        cg_hat, cg_true = components["cg"].predict_windows(cg_frame, starts)
        minutes = [pl_frame.time[s + cfg.seq_len : s + cfg.seq_len + cfg.pred_len] for s in starts]
        pu_true_curve = usage_curve(data.test, "provider")
        cu_true_curve = usage_curve(data.test, "consumer")
    with _phase("integrate"):
        bundles, truths = [], []
        for i, m in enumerate(minutes):
            bundles.append(
                PredictionBundle.from_components(
                    pl_hat[i], components["pu"].predict(m), cg_hat[i], components["cu"].predict(m)
                )
            )
            truths.append(PredictionBundle.from_components(pl_true[i], pu_true_curve(m), cg_true[i], cu_true_curve(m)))
    with _phase("estimate"):
        scale = _el_scale(data)
        el_hat = np.concatenate([b.el_hat for b in bundles])
        el_true = np.concatenate([t.el_hat for t in truths])
        pu_t, pu_y = idle_usage(data.test, "provider")
        cu_t, cu_y = idle_usage(data.test, "consumer")
        metrics = {
            "el_mse": mse(el_hat / scale, el_true / scale),
            "el_mae": mae(el_hat / scale, el_true / scale),
            "el_mse_mAh": mse(el_hat, el_true),
            "el_mae_mAh": mae(el_hat, el_true),
            "pu_mse": mse(components["pu"].predict(pu_t), pu_y),
            "pu_mae": mae(components["pu"].predict(pu_t), pu_y),
            "cu_mse": mse(components["cu"].predict(cu_t), cu_y),
            "cu_mae": mae(components["cu"].predict(cu_t), cu_y),
            "el_scale": scale,
        }
        if not all(np.isfinite(v) for v in metrics.values()):
            raise InvalidParam("non-finite metric")
    return ElpResult(bundles, truths, minutes, data.filter_report, metrics, components)


def _el_scale(data):
    """Spread of the true per-minute energy loss over the training sessions."""
    pl = data.frame("train", "provider")
    cg = data.frame("train", "consumer")
    pu = usage_curve(data.train, "provider")(pl.time)
    cu = usage_curve(data.train, "consumer")(cg.time)
    el = energy_loss(real_transferred(pl.target, pu), real_received(cg.target, cu))
    s = float(np.std(el))
    return s if s > 0 else 1.0


def run_elp(provider, consumer, config=None, components=None):
    """Filter, split, train, integrate and estimate in one call.

    ``components`` may replace any of ``pl``, ``cg`` (sharing forecasters
    with ``fit``/``predict_windows``) and ``pu``, ``cu`` (usage models with
    ``fit``/``predict``). Components that are already fitted are used as is.
    """
    config = config or ElpConfig()
    data = prepare(provider, consumer, config)
    comps = fit_components(data, config, components)
    return estimate(data, comps, config)


def run_elp_records(records, config=None, components=None):
    records = list(records)
    return run_elp(
        [r for r in records if r.role is UserType.PROVIDER],
        [r for r in records if r.role is UserType.CONSUMER],
        config,
        components,
    )


# experiment grid


@dataclass(frozen=True)
class ReportRow:
    section: str
    model: str
    l_token: str
    target: str
    metric: str
    mean: float
    std: float
    n: int


@dataclass
class ExperimentReport:
    """Aggregated grid cells and summary rows, plus every individual run."""

    rows: list
    runs: list
    series: list = field(default_factory=list)
    notes: tuple = REFERENCE_NOTES

    @property
    def grid_rows(self):
        return [r for r in self.rows if r.section == "grid"]

    @property
    def summary_rows(self):
        return [r for r in self.rows if r.section == "summary"]

    def cell(self, model, l_token, target, metric):
        for r in self.grid_rows:
            if (r.model, r.l_token, r.target, r.metric) == (model, str(l_token), target, metric):
                return r
        raise KeyError((model, l_token, target, metric))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["section", "model", "l_token", "target", "metric", "mean", "std", "n"])
        for r in self.rows:
            w.writerow([r.section, r.model, r.l_token, r.target, r.metric, _fmt(r.mean), _fmt(r.std), r.n])
        return buf.getvalue()

    def runs_csv(self):
        buf = io.StringIO()
        cols = ["seed", "model", "l_token", "target", "test_mse", "test_mae", "val_mse", "best_epoch"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for run in self.runs:
            w.writerow([_fmt(run[c]) if isinstance(run[c], float) else run[c] for c in cols])
        return buf.getvalue()

    def series_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["session", "minute_index", "truth", "prediction"])
        for s, m, t, p in self.series:
            w.writerow([s, m, _fmt(t), _fmt(p)])
        return buf.getvalue()

    def to_text(self):
        header = ("model", "L_token", "target", "metric", "mean", "std", "n")
        body = [
            (r.model, r.l_token, r.target, r.metric, f"{r.mean:.5f}", f"{r.std:.5f}", str(r.n))
            for r in self.rows
        ]
        widths = [max(len(x) for x in col) for col in zip(header, *body)]
        lines = ["  ".join(x.ljust(wd) for x, wd in zip(header, widths)).rstrip()]
        lines.append("  ".join("-" * wd for wd in widths))
        lines.extend("  ".join(x.ljust(wd) for x, wd in zip(row, widths)).rstrip() for row in body)
        lines.append("")
        lines.append("Grid metrics use normalized targets; linear-regression rows are in mAh;")
        lines.append("ELP rows are normalized by the spread of the training energy loss.")
        lines.append("Published reference values (different, private data; not targets):")
        lines.extend(f"  [{i + 1}] {note}" for i, note in enumerate(self.notes))
        return "\n".join(lines) + "\n"


def _fmt(x):
    return f"{x:.10g}" if isinstance(x, float) else str(x)


def _mean_std(values):
    values = np.asarray(values, dtype=np.float64)
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return float(np.mean(values)), std


def _fit_cell(job):
    """Train and score one (seed, target, mode, L_token) cell."""
    data, base, seed, target, mode, l_token = job
    cfg = EaseformerConfig.for_mode(mode, **{**base.to_dict(), "label_len": l_token, "seed": seed})
    est = EaseformerForecaster.from_config(cfg)
    t0 = time.perf_counter()
    with _phase("train"):
        est.fit(data.frame("train", target), eval_set=data.frame("val", target))
    with _phase("predict"):
        scores = est.evaluate(data.frame("test", target))
    log.info(
        "seed=%d %s %s L_token=%d val=%.4f test=%.4f (%.1fs)",
        seed, target, mode, l_token, est.best_val_mse_, scores["mse"], time.perf_counter() - t0,
    )
    run = {
        "seed": seed,
        "model": mode,
        "l_token": l_token,
        "target": target,
        "test_mse": scores["mse"],
        "test_mae": scores["mae"],
        "val_mse": est.best_val_mse_,
        "best_epoch": est.best_epoch_,
    }
    return run, est


def thread_budget():
    """Worker count from ``ELP_THREADS`` (default 1)."""
    raw = os.environ.get("ELP_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise InvalidParam(f"ELP_THREADS must be an integer, got {raw!r}") from None


def run_experiment_grid(
    records,
    seeds=(0,),
    config=None,
    modes=tuple(MODES),
    l_tokens=L_TOKENS,
    targets=tuple(TARGETS),
    elp_l_token=30,
    workers=None,
    apply_filter=True,
):
    """Train every (mode, L_token, target) cell for each seed and aggregate.

    All modes see the same filtered split and the same seed, so weight
    initialization and batch order match across modes. ELP summary rows
    reuse the full-model forecasters trained at ``elp_l_token``.
    """
    config = config or ElpConfig()
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise InvalidParam("need at least one seed")
    for m in modes:
        if m not in MODES:
            raise InvalidParam(f"unknown model mode {m!r}")
    for t in targets:
        if t not in TARGETS:
            raise InvalidParam(f"unknown target {t!r}")
    records = list(records)
    data = prepare(
        [r for r in records if r.role is UserType.PROVIDER],
        [r for r in records if r.role is UserType.CONSUMER],
        config,
        apply_filter,
    )
    jobs = [(data, config.model, s, t, m, int(l)) for s in seeds for t in targets for m in modes for l in l_tokens]
    workers = workers or thread_budget()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fit_cell, jobs))
    else:
        results = [_fit_cell(job) for job in jobs]
    runs = [run for run, _ in results]

    rows = []
    for target in targets:
        for mode in modes:
            for l in l_tokens:
                cell = [r for r in runs if (r["target"], r["model"], r["l_token"]) == (target, mode, int(l))]
                for metric, key in (("MSE", "test_mse"), ("MAE", "test_mae")):
                    mean, std = _mean_std([r[key] for r in cell])
                    rows.append(
                        ReportRow("grid", MODE_LABELS[mode], str(l), TARGET_LABELS[target], metric, mean, std, len(cell))
                    )

    # summary rows: self-consumption lines and the full chain, per seed
    elp_runs, series = [], []
    fitted = {(r["seed"], r["target"], r["model"], r["l_token"]): est for r, est in results}
    for seed in seeds:
        comps = {}
        for key, target in (("pl", "provider"), ("cg", "consumer")):
            est = fitted.get((seed, target, "easeformer", int(elp_l_token)))
            if est is None:
                cfg = EaseformerConfig.for_mode(
                    "easeformer", **{**config.model.to_dict(), "label_len": int(elp_l_token), "seed": seed}
                )
                est = EaseformerForecaster.from_config(cfg)
            comps[key] = est
        elp_cfg = ElpConfig(comps["pl"].config, config.dbscan, config.fractions)
        comps = fit_components(data, elp_cfg, comps)
        result = estimate(data, comps, elp_cfg)
        elp_runs.append(result.metrics)
        if not series:
            series = result.series_rows()
    for label, key in (("provider_usage", "pu"), ("consumer_usage", "cu")):
        for metric in ("mse", "mae"):
            mean, std = _mean_std([m[f"{key}_{metric}"] for m in elp_runs])
            rows.append(ReportRow("summary", "LinearRegression", "-", label, metric.upper(), mean, std, len(elp_runs)))
    for metric in ("mse", "mae"):
        mean, std = _mean_std([m[f"el_{metric}"] for m in elp_runs])
        rows.append(ReportRow("summary", "ELP", str(elp_l_token), "energy_loss", metric.upper(), mean, std, len(elp_runs)))
    report = ExperimentReport(rows, runs, series)
    if not all(np.isfinite(r.mean) and np.isfinite(r.std) for r in rows):
        raise PhaseError("report", InvalidParam("non-finite value in the report"))
    return report


__all__ = [
    "ElpConfig",
    "ElpResult",
    "ExperimentReport",
    "PredictionBundle",
    "PreparedData",
    "ReportRow",
    "TruthForecaster",
    "TruthUsage",
    "estimate",
    "fit_components",
    "phase_message",
    "prepare",
    "run_elp",
    "run_elp_records",
    "run_experiment_grid",
    "usage_curve",
]
