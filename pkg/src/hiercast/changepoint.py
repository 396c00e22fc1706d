"""Online change-point detection on forecast residuals with gate mitigation.

A run-length posterior over "time since the last regime change" is updated
once per residual under a conjugate Normal model with constant hazard.  When
the most probable run length collapses to 1, downstream gate weights are
pulled toward uniform and allowed to decay back as evidence accrues.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .config import ChangepointConfig, RunConfig
from .errors import ConfigError, DataError, NumericError
from .neural import adam_state, adam_step


def upm_predictive(x, mean, var, obs_var):
    """Normal predictive density at x with mean mu_l and variance var_l + obs_var."""
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    if np.any(var <= 0.0) or obs_var <= 0.0:
        raise NumericError("predictive variances must be positive")
    v = var + obs_var
    return np.exp(-0.5 * (x - mean) ** 2 / v) / np.sqrt(2.0 * np.pi * v)


def _log_upm(x, mean, var, obs_var):
    v = var + obs_var
    return -0.5 * ((x - mean) ** 2 / v + np.log(2.0 * np.pi * v))


def posterior_update(mean, var, x, obs_var):
    """One conjugate Normal update: precision adds, mean precision-averages."""
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    if np.any(var <= 0.0) or obs_var <= 0.0:
        raise NumericError("variances must be positive")
    new_var = 1.0 / (1.0 / var + 1.0 / obs_var)
    new_mean = new_var * (mean / var + x / obs_var)
    return new_mean, new_var


@dataclass
class RunLengthState:
    """Posterior over run lengths plus per-run conjugate parameters."""

    hazard: float
    mean0: float
    var0: float
    obs_var: float
    rmax: int
    warmup: int
    mode: str = "linear"
    t: int = 0
    fallback_count: int = 0
    posterior: np.ndarray = field(default=None, repr=False)
    log_posterior: np.ndarray = field(default=None, repr=False)
    means: np.ndarray = field(default=None, repr=False)
    vars: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.posterior is None:
            self.posterior = np.array([1.0])
            self.log_posterior = np.array([0.0])
            self.means = np.array([self.mean0])
            self.vars = np.array([self.var0])


def bocpd_init(cfg: ChangepointConfig, mode: str = "linear") -> RunLengthState:
    if not 0.0 < cfg.hazard < 1.0:
        raise ConfigError(f"hazard must be in (0, 1), got {cfg.hazard}")
    if cfg.var0 <= 0.0 or cfg.obs_var <= 0.0:
        raise ConfigError("prior and observation variances must be positive")
    if cfg.rmax < 2:
        raise ConfigError("rmax must be at least 2")
    if mode not in ("linear", "log"):
        raise ConfigError(f"unknown mode {mode!r}")
    return RunLengthState(
        hazard=cfg.hazard,
        mean0=cfg.mean0,
        var0=cfg.var0,
        obs_var=cfg.obs_var,
        rmax=cfg.rmax,
        warmup=cfg.warmup,
        mode=mode,
    )


def _advance_params(state: RunLengthState, x: float):
    upd_mean, upd_var = posterior_update(state.means, state.vars, x, state.obs_var)
    state.means = np.concatenate([[state.mean0], upd_mean])
    state.vars = np.concatenate([[state.var0], upd_var])


def _step_linear(state: RunLengthState, x: float) -> bool:
    pred = upm_predictive(x, state.means, state.vars, state.obs_var)
    mass = state.posterior * pred
    new = np.concatenate([[mass.sum() * state.hazard], mass * (1.0 - state.hazard)])
    evidence = new.sum()
    if not np.isfinite(evidence) or evidence <= 0.0:
        return False
    state.posterior = new / evidence
    return True


def _step_log(state: RunLengthState, x: float) -> None:
    log_mass = state.log_posterior + _log_upm(x, state.means, state.vars, state.obs_var)
    log_new = np.concatenate(
        [[logsumexp(log_mass) + np.log(state.hazard)], log_mass + np.log1p(-state.hazard)]
    )
    # shift before normalizing so huge magnitudes cannot swallow the evidence
    log_new -= log_new.max()
    state.log_posterior = log_new - logsumexp(log_new)
    state.posterior = np.exp(state.log_posterior)


def _truncate(state: RunLengthState) -> None:
    # overflow mass folds into the top bin, which keeps the longest-run
    # parameters; dropping the tail outright would eventually strand all
    # probability in discarded bins
    if state.posterior.shape[0] <= state.rmax + 1:
        return
    merged = state.posterior[-2] + state.posterior[-1]
    state.posterior = np.concatenate([state.posterior[:-2], [merged]])
    if state.mode == "log":
        lm = np.logaddexp(state.log_posterior[-2], state.log_posterior[-1])
        state.log_posterior = np.concatenate([state.log_posterior[:-2], [lm]])
    state.means = np.concatenate([state.means[:-2], [state.means[-1]]])
    state.vars = np.concatenate([state.vars[:-2], [state.vars[-1]]])


def bocpd_step(state: RunLengthState, residual: float):
    """Advance the run-length posterior by one residual.

    Returns (state, change_detected, MAP run length).  Detection fires when
    the MAP run length equals 1 outside the warmup prefix.  A linear-space
    state that underflows to zero evidence switches to log space and retries.
    """
    x = float(residual)
    if not np.isfinite(x):
        raise NumericError("residual is not finite")
    if state.mode == "linear":
        if not _step_linear(state, x):
            with np.errstate(divide="ignore"):
                state.log_posterior = np.log(state.posterior)
            state.mode = "log"
            state.fallback_count += 1
            _step_log(state, x)
    else:
        _step_log(state, x)
    _advance_params(state, x)
    _truncate(state)
    state.t += 1
    map_run = int(np.argmax(state.posterior))
    detected = map_run == 1 and state.t != 1 and state.t > state.warmup
    return state, detected, map_run


@dataclass
class ShrinkState:
    """Tracks steps since the last detected change for weight blending."""

    beta0: float = 1.0
    gamma: float = 2.0
    steps_since_change: float = np.inf

    @property
    def active(self) -> bool:
        return np.isfinite(self.steps_since_change)

    def factor(self) -> float:
        if not self.active:
            return 0.0
        return self.beta0 * float(np.exp(-self.steps_since_change / self.gamma))

    def on_detect(self) -> None:
        self.steps_since_change = 0.0

    def advance(self) -> None:
        if not self.active:
            return
        if np.exp(-self.steps_since_change / self.gamma) < 0.1:
            self.steps_since_change = np.inf
        else:
            self.steps_since_change += 1.0


def shrink_weights(g_opt, shrink: ShrinkState) -> np.ndarray:
    """Blend gate weights toward uniform right after a change, decaying back."""
    g = np.asarray(g_opt, dtype=float)
    if not 0.0 <= shrink.beta0 <= 1.0:
        raise ConfigError(f"beta0 must be in [0, 1], got {shrink.beta0}")
    if g.ndim != 1 or abs(g.sum() - 1.0) > 1e-6 or np.any(g < -1e-9):
        raise NumericError("gate weights must lie on the simplex")
    if not shrink.active:
        return g
    blend = shrink.factor()
    return (1.0 - blend) * g + blend / g.shape[0]


@dataclass
class OnlineRecord:
    """One step of the online loop, ready for CSV serialization."""

    t: int
    y: float
    yhat: float
    residual: float
    map_runlength: int
    detected: bool
    weights: np.ndarray
    quantiles: np.ndarray | None = None


def online_loop(forecaster, quantile_gen, stream, cfg: RunConfig, start: int | None = None):
    """Run one-step-ahead prediction with detection and mitigation.

    Each step: predict with (possibly shrunk) gate weights, score the
    residual through the run-length posterior, reset the shrinkage clock on
    detection, then nudge the gate net by a few Adam epochs on the newest
    window.  Expert refitting is optional and off by default.
    """
    x = np.asarray(stream, dtype=float)
    gate = forecaster.gate
    window = gate.window
    if start is None:
        if forecaster.insample_indices is None:
            raise ConfigError("start index required for a forecaster without training records")
        start = int(forecaster.insample_indices[-1]) + 1
    if start >= x.shape[0]:
        raise DataError("stream exhausted: no observations after the start index")
    min_start = max(window, max(e.min_history for e in forecaster.experts))
    if start < min_start:
        raise DataError(f"start index {start} leaves too little history (need {min_start})")

    state = bocpd_init(cfg.changepoint)
    shrink = ShrinkState(beta0=cfg.online.beta0, gamma=cfg.online.gamma)
    opt = adam_state(gate.net, cfg.gate.lr)
    records = []
    for t in range(start, x.shape[0]):
        hist = x[:t]
        fcst = np.array([e.predict_next(hist) for e in forecaster.experts])
        g_opt = gate.weights(x[t - window : t])
        g = shrink_weights(g_opt, shrink) if cfg.online.mitigation else g_opt
        yhat = float(g @ fcst)
        quants = None
        if quantile_gen is not None:
            quants = quantile_gen.quantiles(x[t - window : t][None, :], [yhat], quantile_gen.grid)[0]
        y = float(x[t])
        residual = y - yhat
        state, detected, map_run = bocpd_step(state, residual)
        if cfg.online.mitigation:
            if detected:
                shrink.on_detect()
            else:
                shrink.advance()
        xb = gate.scaler.transform(x[t - window : t])[None, :]
        for _ in range(cfg.online.epochs):
            out, cache = gate.net.forward(xb)
            grad_combined = 2.0 * (float(out[0] @ fcst) - y)
            grads, _ = gate.net.backward(cache, grad_combined * fcst[None, :])
            adam_step(gate.net, grads, opt)
        if cfg.online.update_experts:
            for expert in forecaster.experts:
                expert.fit(x[: t + 1])
        records.append(
            OnlineRecord(
                t=t,
                y=y,
                yhat=yhat,
                residual=residual,
                map_runlength=map_run,
                detected=detected,
                weights=g,
                quantiles=quants,
            )
        )
    return records
