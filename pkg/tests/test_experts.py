import numpy as np
import pytest

from hiercast.errors import DataError, NotFittedError
from hiercast.experts import (
    AutoRegressor,
    ExpSmoother,
    MovingAverage,
    SeasonalNaive,
    WindowNet,
    make_expert,
)


def ar1_series(coef=0.5, start=1.0, length=50):
    x = np.empty(length)
    x[0] = start
    for t in range(1, length):
        x[t] = coef * x[t - 1]
    return x


def default_roster(window=8):
    return [
        AutoRegressor(order=4),
        ExpSmoother(holt=True),
        SeasonalNaive(period=6),
        MovingAverage(window=4),
        WindowNet(window=window, hidden=(16,), epochs=60),
    ]


def test_ar_recovers_noiseless_coefficient():
    """AR(1) least squares on x_t = 0.5 x_{t-1} finds the coefficient exactly."""
    ar = AutoRegressor(order=1).fit(ar1_series())
    assert ar.coefficients[0] == pytest.approx(0.5, abs=1e-8)


def test_ar_rolling_matches_direct_formula(rng):
    series = rng.normal(size=60)
    ar = AutoRegressor(order=1).fit(series[:40])
    out = ar.rolling_forecasts(series, 40, 50)
    assert np.allclose(out, ar.coefficients[0] * series[39:49])


def test_ar_recursion_halves():
    """Coefficient 0.5 from last value 8 gives [4, 2, 1]."""
    ar = AutoRegressor(order=1).fit(ar1_series())
    assert np.allclose(ar.forecast_recursive([8.0], 3), [4.0, 2.0, 1.0])


def test_ar_ridge_fallback_on_constant_series():
    ar = AutoRegressor(order=4).fit(np.full(30, 5.0))
    assert np.isfinite(ar.coefficients).all()
    assert ar.predict_next(np.full(10, 5.0)) == pytest.approx(5.0, abs=1e-6)


def test_exp_smoother_grid_and_ties():
    """Grid search lands in the grid; ties break toward the smaller alpha."""
    rng = np.random.default_rng(0)
    es = ExpSmoother(holt=True).fit(np.cumsum(rng.normal(size=80)) + 20.0)
    assert es.alpha in np.round(np.arange(0.05, 0.951, 0.05), 2)
    assert es.beta in np.round(np.arange(0.05, 0.951, 0.05), 2)
    # constant series: every (alpha, beta) has zero SSE, so the first grid point wins
    flat = ExpSmoother(holt=True).fit(np.full(30, 2.0))
    assert (flat.alpha, flat.beta) == (0.05, 0.05)


def test_seasonal_naive_stores_and_repeats():
    series = np.tile([1.0, 2.0, 3.0], 5)
    sn = SeasonalNaive(period=3).fit(series)
    assert np.array_equal(sn.last_season, [1.0, 2.0, 3.0])
    assert sn.predict_next(series) == 1.0
    out = sn.rolling_forecasts(series, 6, 12)
    assert np.array_equal(out, series[3:9])


def test_moving_average_values(rng):
    series = rng.normal(size=30)
    ma = MovingAverage(window=4).fit(series[:20])
    assert ma.predict_next(series[:20]) == pytest.approx(series[16:20].mean())
    out = ma.rolling_forecasts(series, 20, 25)
    expected = [series[j - 4 : j].mean() for j in range(20, 25)]
    assert np.allclose(out, expected)


def test_every_expert_forecasts_constant_series():
    """All roster kinds forecast a constant series to within 1e-6."""
    series = np.full(60, 3.25)
    for expert in default_roster():
        expert.fit(series, rng=np.random.default_rng(0))
        assert expert.predict_next(series) == pytest.approx(3.25, abs=1e-6), expert.kind


def test_recursive_single_step_equals_rolling(rng):
    """h=1 recursion agrees with the one-step rolling forecast at the same index."""
    series = np.sin(np.arange(80) / 3.0) + rng.normal(0, 0.05, size=80)
    for expert in default_roster():
        expert.fit(series[:60], rng=np.random.default_rng(1))
        one = expert.forecast_recursive(series[:60], 1)[0]
        rolled = expert.rolling_forecasts(series, 60, 61)[0]
        assert one == pytest.approx(rolled, rel=1e-12), expert.kind


def test_rolling_never_leaks_future_values(rng):
    """Perturbing series values at index >= j leaves the forecast at j unchanged."""
    base = np.cos(np.arange(100) / 5.0) + rng.normal(0, 0.1, size=100)
    tampered = base.copy()
    tampered[70:] += rng.normal(5.0, 3.0, size=30)
    for expert in default_roster():
        expert.fit(base[:60], rng=np.random.default_rng(2))
        a = expert.rolling_forecasts(base, 60, 70)
        b = expert.rolling_forecasts(tampered, 60, 70)
        assert np.array_equal(a, b), expert.kind


def test_fit_required_before_predict():
    for expert in default_roster():
        with pytest.raises(NotFittedError):
            expert.predict_next(np.zeros(30))
        with pytest.raises(NotFittedError):
            expert.rolling_forecasts(np.zeros(30), 10, 12)


def test_fit_minimum_lengths():
    with pytest.raises(DataError, match="below fit minimum"):
        AutoRegressor(order=4).fit(np.zeros(4))
    with pytest.raises(DataError, match="below fit minimum"):
        SeasonalNaive(period=12).fit(np.zeros(12))
    with pytest.raises(DataError, match="below fit minimum"):
        WindowNet(window=8).fit(np.zeros(8))
    with pytest.raises(DataError, match="below fit minimum"):
        ExpSmoother().fit(np.zeros(2))


def test_rolling_range_validation(rng):
    series = rng.normal(size=30)
    ar = AutoRegressor(order=3).fit(series[:20])
    with pytest.raises(DataError, match="history minimum"):
        ar.rolling_forecasts(series, 2, 10)
    with pytest.raises(DataError, match="bad rolling range"):
        ar.rolling_forecasts(series, 10, 40)


def test_window_net_deterministic_under_seed(rng):
    series = np.sin(np.arange(120) / 4.0) + rng.normal(0, 0.05, size=120)
    a = WindowNet(window=8, hidden=(16,), epochs=40).fit(series, rng=np.random.default_rng(5))
    b = WindowNet(window=8, hidden=(16,), epochs=40).fit(series, rng=np.random.default_rng(5))
    for wa, wb in zip(a.net.weights, b.net.weights):
        assert np.array_equal(wa, wb)
    assert a.predict_next(series) == b.predict_next(series)


def test_window_net_learns_smooth_signal():
    t = np.arange(200)
    series = 10.0 + np.sin(t / 6.0) * 3.0
    net = WindowNet(window=12, hidden=(24,), epochs=120).fit(series[:160], rng=np.random.default_rng(3))
    preds = net.rolling_forecasts(series, 160, 190)
    rmse = float(np.sqrt(np.mean((preds - series[160:190]) ** 2)))
    assert rmse < 0.4


def test_make_expert_factory():
    assert make_expert("ar_ls", order=2).order == 2
    assert make_expert("seasonal_naive", period=7).period == 7
    with pytest.raises(DataError, match="unknown expert kind"):
        make_expert("prophet")
