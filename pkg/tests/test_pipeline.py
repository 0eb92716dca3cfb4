import numpy as np
import pytest

from elp.dataio import GeneratorConfig, generate_synthetic, normalize_fit
from elp.domain import UserType
from elp.easeformer import EaseformerConfig
from elp.exceptions import InsufficientHistory, InvalidParam, PhaseError
from elp.pipeline import (
    ElpConfig,
    PredictionBundle,
    TruthForecaster,
    TruthUsage,
    estimate,
    fit_components,
    phase_message,
    prepare,
    run_elp_records,
    run_experiment_grid,
    thread_budget,
    usage_curve,
)

TINY = EaseformerConfig.desk(d_model=16, n_heads=2, label_len=30, epochs=1)


def _roles(records):
    return (
        [r for r in records if r.role is UserType.PROVIDER],
        [r for r in records if r.role is UserType.CONSUMER],
    )


def test_bundle_invariants():
    rng = np.random.default_rng(0)
    pl, pu, cg, cu = rng.normal(size=(4, 30))
    b = PredictionBundle.from_components(pl, pu, cg, cu)
    np.testing.assert_array_equal(b.rt_hat, pl - pu)
    np.testing.assert_array_equal(b.rr_hat, cg + cu)
    np.testing.assert_array_equal(b.el_hat, b.rt_hat - b.rr_hat)
    assert len(b) == 30


def test_prepare_filters_and_splits():
    data = prepare(*_roles(generate_synthetic()))
    assert data.filter_report.points_removed == 360
    n = [data.frame(p, "provider").n_sessions for p in ("train", "val", "test")]
    assert n == [18, 8, 10]
    unfiltered = prepare(*_roles(generate_synthetic()), apply_filter=False)
    assert unfiltered.filter_report.n_outliers == 0
    assert unfiltered.frame("train", "provider").n_sessions == 21


def test_truth_forecasters_leave_only_the_usage_error():
    result = run_elp_records(
        generate_synthetic(),
        ElpConfig(TINY),
        components={"pl": TruthForecaster(), "cg": TruthForecaster()},
    )
    scale = result.metrics["el_scale"]
    diffs = []
    for b, t in zip(result.bundles, result.truths):
        np.testing.assert_array_equal(b.pl_hat, t.pl_hat)
        diffs.append((b.pu_hat - t.pu_hat) + (b.cu_hat - t.cu_hat))
    expected = float(np.mean(np.concatenate(diffs) ** 2)) / scale**2
    assert result.metrics["el_mse"] == pytest.approx(expected, rel=1e-12)
    assert result.metrics["el_mse"] > 0


def test_noiseless_perfect_chain_has_zero_error():
    records = generate_synthetic(GeneratorConfig(noise_sigma=0.0, idle_noise=0.0, anomaly_count=0))
    cfg = ElpConfig(TINY)
    data = prepare(*_roles(records), cfg)
    comps = {
        "pl": TruthForecaster(),
        "cg": TruthForecaster(),
        "pu": TruthUsage(usage_curve(data.test, "provider")),
        "cu": TruthUsage(usage_curve(data.test, "consumer")),
    }
    comps = fit_components(data, cfg, comps)
    result = estimate(data, comps, cfg)
    assert result.metrics["el_mse"] == 0.0
    assert result.metrics["el_mae_mAh"] == 0.0


def test_linear_usage_is_nearly_exact_on_noiseless_idle_data():
    records = generate_synthetic(GeneratorConfig(idle_noise=0.0))
    result = run_elp_records(records, ElpConfig(TINY), components={"pl": TruthForecaster(), "cg": TruthForecaster()})
    assert result.metrics["el_mse_mAh"] < 1e-20


@pytest.fixture(scope="module")
def trained_run():
    return run_elp_records(generate_synthetic(), ElpConfig(TINY))


def test_real_run_structure(trained_run):
    res = trained_run
    assert len(res.bundles) == len(res.truths) == 7
    for b in res.bundles:
        assert len(b.el_hat) == 30
        np.testing.assert_array_equal(b.el_hat, b.rt_hat - b.rr_hat)
        np.testing.assert_array_equal(b.rt_hat, b.pl_hat - b.pu_hat)
        np.testing.assert_array_equal(b.rr_hat, b.cg_hat + b.cu_hat)
    assert all(np.isfinite(v) for v in res.metrics.values())
    rows = res.series_rows()
    assert len(rows) == 7 * 30 and rows[0][1] == 0


def test_statistics_come_from_training_split_only(trained_run):
    data = prepare(*_roles(generate_synthetic()))
    pl = trained_run.components["pl"]
    assert pl.stats_ == normalize_fit(data.frame("train", "provider"))
    assert pl.table_.distances == (1.0, 1.5, 2.0)


def test_phase_tagged_errors():
    records = generate_synthetic()
    with pytest.raises(InsufficientHistory) as err:
        run_elp_records(records, ElpConfig(TINY, fractions=(0.9, 0.1, 0.0)),
                        components={"pl": TruthForecaster(), "cg": TruthForecaster()})
    assert err.value.phase == "predict"
    assert phase_message(err.value).startswith("[predict] InsufficientHistory:")
    assert phase_message(PhaseError("train", ValueError("boom"))) == "[train] ValueError: boom"


def test_thread_budget(monkeypatch):
    monkeypatch.setenv("ELP_THREADS", "3")
    assert thread_budget() == 3
    monkeypatch.setenv("ELP_THREADS", "many")
    with pytest.raises(InvalidParam):
        thread_budget()
    monkeypatch.delenv("ELP_THREADS")
    assert thread_budget() == 1


def _small_grid(**kw):
    return run_experiment_grid(
        generate_synthetic(), seeds=(0, 1), config=ElpConfig(TINY), l_tokens=(30,), targets=("provider",), **kw
    )


@pytest.fixture(scope="module")
def small_report():
    return _small_grid()


def test_grid_report_shape(small_report):
    rep = small_report
    assert len(rep.grid_rows) == 3 * 1 * 1 * 2
    assert len(rep.runs) == 2 * 3
    assert {r.n for r in rep.grid_rows} == {2}
    labels = [(r.model, r.target, r.metric) for r in rep.summary_rows]
    assert ("ELP", "energy_loss", "MSE") in labels
    assert ("LinearRegression", "provider_usage", "MSE") in labels
    cell = rep.cell("Easeformer", 30, "provider_loss", "MSE")
    runs = [r["test_mse"] for r in rep.runs if r["model"] == "easeformer"]
    assert cell.mean == pytest.approx(np.mean(runs))
    assert cell.std == pytest.approx(np.std(runs, ddof=1))
    text = rep.to_text()
    assert "0.1104" in text and "0.11676" in text
    assert rep.series_csv().startswith("session,minute_index,truth,prediction\n")


def test_grid_is_deterministic(small_report):
    again = _small_grid()
    assert again.to_csv() == small_report.to_csv()
    assert again.runs_csv() == small_report.runs_csv()


def test_grid_parallel_matches_serial(small_report):
    assert _small_grid(workers=2).to_csv() == small_report.to_csv()


def test_grid_rejects_unknown_names():
    with pytest.raises(InvalidParam):
        run_experiment_grid(generate_synthetic(), modes=("transformer",))
    with pytest.raises(InvalidParam):
        run_experiment_grid(generate_synthetic(), targets=("battery",))
