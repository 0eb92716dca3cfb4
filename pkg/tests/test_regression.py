import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elp.dataio import GeneratorConfig, generate_synthetic, split
from elp.exceptions import DegenerateInput, InvalidSeries, ShapeError
from elp.regression import LinearModel, LinearUsageRegressor, fit_linear, idle_usage, predict_linear


def normal_equation(t, y):
    """Solve (X^T X) b = X^T y for X = [1, t] by explicit 2x2 inversion."""
    n, st_, stt = len(t), float(np.sum(t)), float(np.sum(t * t))
    sy, sty = float(np.sum(y)), float(np.sum(t * y))
    det = n * stt - st_ * st_
    intercept = (stt * sy - st_ * sty) / det
    slope = (n * sty - st_ * sy) / det
    return slope, intercept


def test_exact_line():
    t = np.arange(30.0)
    m = fit_linear(t, 2 * t + 1)
    assert abs(m.slope - 2) < 1e-12 and abs(m.intercept - 1) < 1e-12


def test_constant_series():
    m = fit_linear(np.arange(10.0), np.full(10, 4.2))
    assert abs(m.slope) < 1e-15
    assert abs(m.intercept - 4.2) < 1e-12


def test_noisy_fit_matches_normal_equations():
    rng = np.random.default_rng(7)
    t = np.arange(30.0)
    y = 0.5 * t + rng.normal(0, 0.02, 30)
    m = fit_linear(t, y)
    slope, intercept = normal_equation(t, y)
    assert abs(m.slope - slope) < 1e-9
    assert abs(m.intercept - intercept) < 1e-9


def test_errors():
    with pytest.raises(DegenerateInput):
        fit_linear([3.0, 3.0, 3.0], [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateInput):
        fit_linear([1.0], [1.0])
    with pytest.raises(ShapeError):
        fit_linear([1.0, 2.0], [1.0])
    with pytest.raises(InvalidSeries):
        LinearModel(np.nan, 0.0)


def test_predict():
    m = LinearModel(0.0, 3.0)
    np.testing.assert_array_equal(predict_linear(m, [0, 5, 9]), [3, 3, 3])
    assert predict_linear(LinearModel(2.0, -1.0), 0.0) == -1.0
    rng = np.random.default_rng(0)
    t = rng.uniform(0, 10, 25)
    y = 1.5 * t - 2 + rng.normal(0, 0.1, 25)
    fitted = fit_linear(t, y)
    slope, intercept = normal_equation(t, y)
    np.testing.assert_allclose(fitted.predict(t), slope * t + intercept, rtol=0, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=40, unique=True),
    st.integers(0, 2**31),
    st.floats(-50, 50, allow_nan=False),
)
def test_residuals_orthogonal_and_scaling(ts, seed, k):
    t = np.array(ts)
    y = np.random.default_rng(seed).normal(size=t.size)
    m = fit_linear(t, y)
    r = y - m.predict(t)
    scale = max(1.0, float(np.abs(t).max()))
    assert abs(r.sum()) < 1e-9 * t.size
    assert abs(r @ t) < 1e-9 * t.size * scale
    mk = fit_linear(t, k * y)
    assert abs(mk.slope - k * m.slope) < 1e-9 * max(1.0, abs(k * m.slope))
    assert abs(mk.intercept - k * m.intercept) < 1e-9 * max(1.0, abs(k * m.intercept)) * scale


def test_estimator_on_idle_records():
    train, _, test = split(generate_synthetic())
    est = LinearUsageRegressor().fit_records(train, "provider")
    assert est.coef_[0] == pytest.approx(0.4, abs=0.01)
    t, y = idle_usage(test, "provider")
    assert est.score(t, y) > 0.99
    assert np.mean((est.predict(t.reshape(-1, 1)) - y) ** 2) < 1e-3
    with pytest.raises(DegenerateInput):
        idle_usage(generate_synthetic(GeneratorConfig(idle_sessions=0)), "consumer")
