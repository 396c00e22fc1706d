"""One-step forecasting experts sharing a uniform contract.

Every expert fits on an explicit training span and then answers
predict_next(history) using only values strictly before the forecast index,
so rolling evaluation can never leak future data. Recursive multi-step
forecasts feed the expert its own outputs.
"""

from __future__ import annotations

import numpy as np

from .dataio import sliding_windows
from .errors import DataError, NotFittedError
from .neural import DenseNet, ZScore, adam_state, adam_step

SMOOTHING_GRID = np.round(np.arange(0.05, 0.951, 0.05), 2)


class Expert:
    """Base contract; subclasses implement _fit and predict_next."""

    kind = "base"

    def __init__(self):
        self.fit_end = None

    @property
    def min_history(self) -> int:
        raise NotImplementedError

    @property
    def min_fit(self) -> int:
        return self.min_history + 1

    def fit(self, series, rng=None):
        x = np.asarray(series, dtype=float)
        if x.ndim != 1:
            raise DataError("experts fit on 1-D series")
        if x.shape[0] < self.min_fit:
            raise DataError(
                f"{self.kind}: series length {x.shape[0]} below fit minimum {self.min_fit}"
            )
        self._fit(x, rng)
        self.fit_end = int(x.shape[0])
        return self

    def _fit(self, series, rng):
        raise NotImplementedError

    def _require_fitted(self):
        if self.fit_end is None:
            raise NotFittedError(f"{self.kind}: fit() must run before forecasting")

    def predict_next(self, history) -> float:
        raise NotImplementedError

    def rolling_forecasts(self, series, from_idx: int, to_idx: int) -> np.ndarray:
        """One forecast per index j in [from_idx, to_idx), each using series[:j]."""
        self._require_fitted()
        x = np.asarray(series, dtype=float)
        if from_idx < self.min_history:
            raise DataError(
                f"{self.kind}: rolling start {from_idx} below history minimum {self.min_history}"
            )
        if to_idx > x.shape[0] or from_idx > to_idx:
            raise DataError(f"{self.kind}: bad rolling range [{from_idx}, {to_idx})")
        return np.array([self.predict_next(x[:j]) for j in range(from_idx, to_idx)])

    def forecast_recursive(self, series, h: int) -> np.ndarray:
        """h steps ahead, each step consuming previously generated values."""
        self._require_fitted()
        hist = list(np.asarray(series, dtype=float))
        if len(hist) < self.min_history:
            raise DataError(f"{self.kind}: history shorter than {self.min_history}")
        out = []
        for _ in range(h):
            nxt = float(self.predict_next(np.asarray(hist)))
            out.append(nxt)
            hist.append(nxt)
        return np.array(out)


class AutoRegressor(Expert):
    """Least-squares AR(p) without intercept; ridge fallback when singular."""

    kind = "ar_ls"

    def __init__(self, order: int = 4):
        super().__init__()
        if order < 1:
            raise DataError("ar_ls order must be >= 1")
        self.order = int(order)
        self.coefficients = None

    @property
    def min_history(self) -> int:
        return self.order

    def _fit(self, series, rng):
        p = self.order
        rows = series.shape[0] - p
        design = np.empty((rows, p))
        for k in range(1, p + 1):
            design[:, k - 1] = series[p - k : p - k + rows]
        target = series[p:]
        gram = design.T @ design
        rhs = design.T @ target
        if np.linalg.cond(gram) > 1e12:
            gram = gram + 1e-8 * np.eye(p)
        self.coefficients = np.linalg.solve(gram, rhs)

    def predict_next(self, history) -> float:
        self._require_fitted()
        h = np.asarray(history, dtype=float)
        lags = h[-1 : -self.order - 1 : -1]
        return float(np.dot(self.coefficients, lags))


class ExpSmoother(Expert):
    """Exponential smoothing, simple (alpha) or Holt linear-trend (alpha, beta).

    Constants are grid-searched on in-sample one-step squared error over
    {0.05, 0.10, ..., 0.95}; ties break toward the smaller alpha, then beta.
    """

    kind = "exp_smooth"

    def __init__(self, holt: bool = True):
        super().__init__()
        self.holt = bool(holt)
        self.alpha = None
        self.beta = None

    @property
    def min_history(self) -> int:
        return 2 if self.holt else 1

    def _one_step_sse(self, series, alpha, beta) -> float:
        level = series[0]
        trend = series[1] - series[0] if self.holt else 0.0
        sse = 0.0
        for t in range(1, series.shape[0]):
            pred = level + trend
            err = series[t] - pred
            sse += err * err
            new_level = alpha * series[t] + (1.0 - alpha) * (level + trend)
            if self.holt:
                trend = beta * (new_level - level) + (1.0 - beta) * trend
            level = new_level
        return sse

    def _fit(self, series, rng):
        best = (np.inf, None, None)
        betas = SMOOTHING_GRID if self.holt else np.array([0.0])
        for alpha in SMOOTHING_GRID:
            for beta in betas:
                sse = self._one_step_sse(series, alpha, beta)
                if sse < best[0]:
                    best = (sse, float(alpha), float(beta))
        self.alpha, self.beta = best[1], best[2]

    def predict_next(self, history) -> float:
        self._require_fitted()
        x = np.asarray(history, dtype=float)
        level = x[0]
        trend = x[1] - x[0] if self.holt and x.shape[0] > 1 else 0.0
        for t in range(1, x.shape[0]):
            new_level = self.alpha * x[t] + (1.0 - self.alpha) * (level + trend)
            if self.holt:
                trend = self.beta * (new_level - level) + (1.0 - self.beta) * trend
            level = new_level
        return float(level + trend)


class SeasonalNaive(Expert):
    """Repeat the value one season back."""

    kind = "seasonal_naive"

    def __init__(self, period: int = 12):
        super().__init__()
        if period < 1:
            raise DataError("seasonal period must be >= 1")
        self.period = int(period)
        self.last_season = None

    @property
    def min_history(self) -> int:
        return self.period

    def _fit(self, series, rng):
        self.last_season = series[-self.period :].copy()

    def predict_next(self, history) -> float:
        self._require_fitted()
        h = np.asarray(history, dtype=float)
        if h.shape[0] < self.period:
            raise DataError(f"seasonal_naive needs {self.period} past values")
        return float(h[-self.period])


class MovingAverage(Expert):
    """Mean of the trailing window."""

    kind = "moving_average"

    def __init__(self, window: int = 8):
        super().__init__()
        if window < 1:
            raise DataError("moving_average window must be >= 1")
        self.window = int(window)

    @property
    def min_history(self) -> int:
        return self.window

    def _fit(self, series, rng):
        pass

    def predict_next(self, history) -> float:
        self._require_fitted()
        h = np.asarray(history, dtype=float)
        return float(h[-self.window :].mean())


class WindowNet(Expert):
    """Dense net mapping the last ``window`` standardized values to the next one."""

    kind = "window_net"

    def __init__(self, window: int = 16, hidden=(32,), epochs: int = 150, lr: float = 1e-3, batch: int = 16):
        super().__init__()
        self.window = int(window)
        self.hidden = tuple(int(d) for d in hidden)
        self.epochs = int(epochs)
        self.lr = float(lr)
        self.batch = int(batch)
        self.net = None
        self.scaler = None

    @property
    def min_history(self) -> int:
        return self.window

    def _fit(self, series, rng):
        if rng is None:
            rng = np.random.default_rng(0)
        self.scaler = ZScore.fit(series)
        scaled = self.scaler.transform(series)
        batch = sliding_windows(scaled, self.window)
        inputs, targets = batch.supervised()
        dims = (self.window, *self.hidden, 1)
        acts = ("tanh",) * len(self.hidden) + ("identity",)
        self.net = DenseNet(dims, acts, rng)
        state = adam_state(self.net, self.lr)
        n = inputs.shape[0]
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for lo in range(0, n, self.batch):
                sel = order[lo : lo + self.batch]
                xb, yb = inputs[sel], targets[sel]
                out, cache = self.net.forward(xb)
                resid = out[:, 0] - yb
                grad_out = (2.0 * resid / sel.shape[0])[:, None]
                grads, _ = self.net.backward(cache, grad_out)
                adam_step(self.net, grads, state)

    def predict_next(self, history) -> float:
        self._require_fitted()
        h = np.asarray(history, dtype=float)
        if h.shape[0] < self.window:
            raise DataError(f"window_net needs {self.window} past values")
        x = self.scaler.transform(h[-self.window :])
        out, _ = self.net.forward(x)
        return float(self.scaler.invert(out[0]))


EXPERT_KINDS = {
    "ar_ls": AutoRegressor,
    "exp_smooth": ExpSmoother,
    "seasonal_naive": SeasonalNaive,
    "moving_average": MovingAverage,
    "window_net": WindowNet,
}


def make_expert(kind: str, **params) -> Expert:
    if kind not in EXPERT_KINDS:
        raise DataError(f"unknown expert kind {kind!r}; choose from {sorted(EXPERT_KINDS)}")
    return EXPERT_KINDS[kind](**params)
