"""Gated mixtures of experts, one per hierarchy vertex.

A gate maps the latest window of a series to softmax weights over the expert
roster; the combined forecast is the pointwise convex combination of the
experts' one-step forecasts. Parents train after their children, with an
extra penalty pulling the parent's combination toward the signed sum of the
children's already-frozen combinations.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ExpertsConfig, GateConfig, RunConfig
from .errors import DataError, NumericError
from .experts import Expert, make_expert
from .hierarchy import Hierarchy
from .neural import DenseNet, ZScore, adam_state, adam_step

SIMPLEX_TOL = 1e-6


def _check_simplex(weights: np.ndarray) -> None:
    w = np.atleast_2d(weights)
    if w.min() < -SIMPLEX_TOL or np.max(np.abs(w.sum(axis=-1) - 1.0)) > SIMPLEX_TOL:
        raise NumericError("gate weights left the probability simplex")


def combine_forecasts(weights, expert_forecasts):
    """Convex combination of per-expert forecasts.

    ``expert_forecasts`` is one value per expert, or a (n_experts, H) block;
    weights must lie on the simplex within 1e-6.
    """
    w = np.asarray(weights, dtype=float)
    f = np.asarray(expert_forecasts, dtype=float)
    if w.ndim != 1 or w.shape[0] != f.shape[0]:
        raise NumericError(f"weight/forecast length mismatch: {w.shape} vs {f.shape}")
    _check_simplex(w)
    combined = w @ f
    return float(combined) if f.ndim == 1 else combined


def recon_loss(combined, truth, child_sum=None, lam: float = 0.1):
    """Mean squared error plus lam times the mean squared child-sum mismatch.

    ``child_sum`` is the signed sum of the children's combined forecasts; it
    is absent exactly at childless vertices, where the loss is plain MSE.
    """
    c = np.atleast_1d(np.asarray(combined, dtype=float))
    y = np.atleast_1d(np.asarray(truth, dtype=float))
    if c.shape != y.shape:
        raise NumericError("combined/truth length mismatch")
    loss = float(np.mean((c - y) ** 2))
    if child_sum is not None:
        cs = np.atleast_1d(np.asarray(child_sum, dtype=float))
        if cs.shape != c.shape:
            raise NumericError("child-sum length mismatch")
        loss += lam * float(np.mean((c - cs) ** 2))
    return loss


@dataclass
class TrainingHistory:
    """Per-epoch loss plus the mean gate weights seen in each epoch."""

    loss: np.ndarray
    weights: np.ndarray


@dataclass
class GatingNetwork:
    """Window -> softmax weights over the expert roster."""

    net: DenseNet
    window: int
    n_experts: int
    lam: float
    scaler: ZScore

    def weights(self, windows) -> np.ndarray:
        x = np.asarray(windows, dtype=float)
        out, _ = self.net.forward(self.scaler.transform(x))
        _check_simplex(out)
        return out


def gate_start_index(experts, window: int) -> int:
    """First target index with a full window and enough expert history."""
    return max(window, max(e.min_history for e in experts))


def rolling_matrix(experts, series, from_idx: int, to_idx: int) -> np.ndarray:
    """Stack each expert's rolling one-step forecasts into an (L, n) block."""
    return np.vstack([e.rolling_forecasts(series, from_idx, to_idx) for e in experts])


def _window_block(series: np.ndarray, target_idx: np.ndarray, window: int) -> np.ndarray:
    idx = target_idx[:, None] + np.arange(-window, 0)[None, :]
    return series[idx]


def train_gate(
    series,
    experts,
    train_end: int,
    val_end: int,
    window: int,
    cfg: GateConfig,
    child_sum=None,
    expert_forecasts=None,
    rng=None,
):
    """Train one vertex's gate on windows whose targets lie before val_end.

    Experts must already be fitted on the training span. ``child_sum`` (and
    the optional precomputed ``expert_forecasts``) are aligned to the target
    indices [gate_start_index(...), val_end), restricted to the validation
    span when cfg.validation_only is set. Returns (GatingNetwork, history).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    x = np.asarray(series, dtype=float)
    lo = gate_start_index(experts, window)
    if cfg.validation_only:
        lo = max(lo, train_end)
    if lo >= val_end:
        raise DataError(f"no gate training rows: start {lo} >= val_end {val_end}")
    target_idx = np.arange(lo, val_end)
    n = target_idx.shape[0]
    n_experts = len(experts)

    if expert_forecasts is None:
        expert_forecasts = rolling_matrix(experts, x, lo, val_end)
    forecasts = np.asarray(expert_forecasts, dtype=float)
    if forecasts.shape != (n_experts, n):
        raise DataError(f"expert forecast block must be ({n_experts}, {n})")
    lam = float(cfg.lam)
    if child_sum is not None:
        child_sum = np.asarray(child_sum, dtype=float)
        if child_sum.shape != (n,):
            raise DataError(f"child_sum must have length {n}")
    else:
        lam = 0.0

    scaler = ZScore.fit(x[:train_end])
    inputs = scaler.transform(_window_block(x, target_idx, window))
    targets = x[target_idx]
    fcst_rows = forecasts.T  # (n, L)

    net = DenseNet([window, cfg.hidden, n_experts], ["tanh", "softmax"], rng)
    state = adam_state(net, cfg.lr)
    loss_hist = np.empty(cfg.epochs)
    weight_hist = np.empty((cfg.epochs, n_experts))
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        ep_loss = 0.0
        ep_weights = np.zeros(n_experts)
        for start in range(0, n, cfg.batch):
            sel = order[start : start + cfg.batch]
            b = sel.shape[0]
            w, cache = net.forward(inputs[sel])
            _check_simplex(w)
            fb = fcst_rows[sel]
            combined = np.sum(w * fb, axis=1)
            err = combined - targets[sel]
            grad_combined = 2.0 * err / b
            batch_loss = float(np.mean(err**2))
            if child_sum is not None and lam > 0.0:
                mismatch = combined - child_sum[sel]
                grad_combined = grad_combined + lam * 2.0 * mismatch / b
                batch_loss += lam * float(np.mean(mismatch**2))
            if not np.isfinite(batch_loss):
                raise NumericError("non-finite gate training loss")
            grads, _ = net.backward(cache, grad_combined[:, None] * fb)
            adam_step(net, grads, state)
            ep_loss += batch_loss * b
            ep_weights += w.sum(axis=0)
        loss_hist[epoch] = ep_loss / n
        weight_hist[epoch] = ep_weights / n
    gate = GatingNetwork(net=net, window=window, n_experts=n_experts, lam=lam, scaler=scaler)
    return gate, TrainingHistory(loss=loss_hist, weights=weight_hist)


@dataclass
class MixtureForecaster:
    """A trained gate plus its fitted experts for one vertex."""

    vertex: str
    experts: list
    gate: GatingNetwork
    history: TrainingHistory | None = None
    insample_indices: np.ndarray | None = field(default=None, repr=False)
    insample_combined: np.ndarray | None = field(default=None, repr=False)

    def combined_rolling(self, series, from_idx: int, to_idx: int, expert_forecasts=None) -> np.ndarray:
        """One-step combined forecasts for targets in [from_idx, to_idx)."""
        x = np.asarray(series, dtype=float)
        if expert_forecasts is None:
            expert_forecasts = rolling_matrix(self.experts, x, from_idx, to_idx)
        target_idx = np.arange(from_idx, to_idx)
        weights = self.gate.weights(_window_block(x, target_idx, self.gate.window))
        return np.sum(weights * expert_forecasts.T, axis=1)

    def weights_over(self, series, from_idx: int, to_idx: int) -> np.ndarray:
        x = np.asarray(series, dtype=float)
        target_idx = np.arange(from_idx, to_idx)
        return self.gate.weights(_window_block(x, target_idx, self.gate.window))

    def forecast_recursive(self, series, h: int) -> np.ndarray:
        hist = list(np.asarray(series, dtype=float))
        out = []
        for _ in range(h):
            arr = np.asarray(hist)
            w = self.gate.weights(arr[-self.gate.window :])
            f = np.array([e.predict_next(arr) for e in self.experts])
            nxt = combine_forecasts(w, f)
            out.append(nxt)
            hist.append(nxt)
        return np.array(out)


def forecast_mixture(forecaster: MixtureForecaster, series, h: int) -> np.ndarray:
    """Recursive h-step mixture forecast feeding combined values back in."""
    return forecaster.forecast_recursive(series, h)


def build_roster(cfg: ExpertsConfig, window: int) -> list:
    """Instantiate the configured expert kinds (unfitted)."""
    experts = []
    for kind in cfg.roster:
        if kind == "ar_ls":
            experts.append(make_expert(kind, order=cfg.ar_order))
        elif kind == "exp_smooth":
            experts.append(make_expert(kind, holt=cfg.holt))
        elif kind == "seasonal_naive":
            experts.append(make_expert(kind, period=cfg.seasonal_period))
        elif kind == "moving_average":
            experts.append(make_expert(kind, window=cfg.ma_window))
        elif kind == "window_net":
            experts.append(
                make_expert(kind, window=window, hidden=cfg.net_hidden, epochs=cfg.net_epochs, lr=cfg.net_lr)
            )
        else:
            experts.append(make_expert(kind))
    return experts


def _vertex_rng(seed: int, vertex_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, 7919 + vertex_index])


def train_hierarchy_bottom_up(panel, hierarchy: Hierarchy, cfg: RunConfig) -> dict[str, MixtureForecaster]:
    """Train every vertex level by level, deepest first.

    Children within a level may train concurrently (cfg.jobs > 1); results
    are deterministic for a fixed (config, seed) regardless of concurrency
    because each vertex draws from its own seeded generator. Childless
    vertices train on plain MSE; parents add the child-sum penalty using the
    already-trained children's in-sample combinations as constants.
    """
    vertex_index = {v: i for i, v in enumerate(hierarchy.vertices)}
    forecasters: dict[str, MixtureForecaster] = {}

    def train_one(vertex: str) -> MixtureForecaster:
        rng = _vertex_rng(cfg.seed, vertex_index[vertex])
        series = panel.values[vertex]
        experts = build_roster(cfg.experts, cfg.window)
        for expert in experts:
            expert.fit(series[: panel.train_end], rng=rng)
        lo = gate_start_index(experts, cfg.window)
        if cfg.gate.validation_only:
            lo = max(lo, panel.train_end)
        forecasts = rolling_matrix(experts, series, lo, panel.val_end)
        child_sum = None
        if hierarchy.children[vertex]:
            child_sum = np.zeros(panel.val_end - lo)
            for child, sign in hierarchy.children[vertex]:
                child_sum += sign * forecasters[child].insample_combined
        gate, history = train_gate(
            series,
            experts,
            panel.train_end,
            panel.val_end,
            cfg.window,
            cfg.gate,
            child_sum=child_sum,
            expert_forecasts=forecasts,
            rng=rng,
        )
        mf = MixtureForecaster(vertex=vertex, experts=experts, gate=gate, history=history)
        mf.insample_indices = np.arange(lo, panel.val_end)
        mf.insample_combined = mf.combined_rolling(series, lo, panel.val_end, expert_forecasts=forecasts)
        return mf

    for group in hierarchy.levels_descending():
        group = sorted(group, key=vertex_index.get)
        if cfg.jobs > 1 and len(group) > 1:
            with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
                trained = list(pool.map(train_one, group))
        else:
            trained = [train_one(v) for v in group]
        for mf in trained:
            forecasters[mf.vertex] = mf
    return forecasters


def refit_experts_through_validation(panel, forecasters: dict[str, MixtureForecaster], cfg: RunConfig) -> None:
    """Re-fit every vertex's experts on the train+validation span in place."""
    vertex_index = {v: i for i, v in enumerate(forecasters)}
    for vertex, mf in forecasters.items():
        rng = np.random.default_rng([cfg.seed, 104729 + vertex_index[vertex]])
        series = panel.values[vertex]
        for expert in mf.experts:
            expert.fit(series[: panel.val_end], rng=rng)
