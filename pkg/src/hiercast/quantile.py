"""Monotone quantile curves built from positive Chebyshev integrands.

One shared net, replicated per Chebyshev root with the root as an extra
input feature, learns a positive integrand value for the current window;
integrating the interpolated integrand in coefficient space yields a
non-decreasing quantile curve q(tau) on tau in [0, 1], anchored so that its
median (or mean) equals the supplied point forecast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import QuantileConfig
from .errors import DataError, NumericError
from .neural import DenseNet, ZScore, adam_state, adam_step, positive_transform, positive_transform_grad

CONSTRAINTS = ("median", "mean")


def chebyshev_roots(degree: int) -> np.ndarray:
    """Roots of T_d: cos(pi (k + 1/2) / d) for k = 0..d-1, strictly decreasing."""
    if degree < 1:
        raise NumericError(f"degree must be >= 1, got {degree}")
    k = np.arange(degree)
    return np.cos(np.pi * (k + 0.5) / degree)


def chebyshev_T(k: int, z):
    """T_k(z) by the three-term recurrence; z may be a scalar or array."""
    if k < 0:
        raise NumericError("Chebyshev order must be >= 0")
    z = np.asarray(z, dtype=float)
    prev = np.ones_like(z)
    if k == 0:
        return prev
    cur = z.copy()
    for _ in range(k - 1):
        prev, cur = cur, 2.0 * z * cur - prev
    return cur


def _chebyshev_table(orders: int, z: np.ndarray) -> np.ndarray:
    """Rows T_1(z) .. T_orders(z)."""
    table = np.empty((orders, z.shape[0]))
    prev = np.ones_like(z)
    cur = z.copy()
    for k in range(orders):
        table[k] = cur
        prev, cur = cur, 2.0 * z * cur - prev
    return table


def cosine_matrix(degree: int) -> np.ndarray:
    """COS[i, k] = cos(i pi (k + 1/2) / d); dct_coefficients is COS @ values."""
    i = np.arange(degree)[:, None]
    k = np.arange(degree)[None, :]
    return np.cos(i * np.pi * (k + 0.5) / degree)


def dct_coefficients(values) -> np.ndarray:
    """Direct cosine sums c_i = sum_k values[k] cos(i pi (k+1/2) / d)."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise NumericError("dct_coefficients expects a non-empty vector")
    return cosine_matrix(v.shape[0]) @ v


def integration_matrix(degree: int) -> np.ndarray:
    """Sparse map from raw cosine coefficients to antiderivative coefficients.

    C_k = (c_{k-1} - c_{k+1}) / (4k) for 0 < k < d-1 and
    C_{d-1} = c_{d-2} / (4(d-1)).
    """
    if degree < 2:
        return np.zeros((0, max(degree, 0)))
    mat = np.zeros((degree - 1, degree))
    for k in range(1, degree - 1):
        mat[k - 1, k - 1] = 1.0 / (4.0 * k)
        mat[k - 1, k + 1] = -1.0 / (4.0 * k)
    mat[degree - 2, degree - 2] = 1.0 / (4.0 * (degree - 1))
    return mat


def integrate_coefficients(raw, degree: int | None = None) -> np.ndarray:
    """Antiderivative coefficients C_1..C_{d-1} from raw cosine coefficients."""
    c = np.asarray(raw, dtype=float)
    if degree is None:
        degree = c.shape[0]
    if c.shape != (degree,):
        raise NumericError(f"expected {degree} raw coefficients, got {c.shape}")
    return integration_matrix(degree) @ c


def curve_coefficients(values) -> np.ndarray:
    """Antiderivative coefficients of the integrand sampled at the roots.

    The raw cosine sums carry a d/2 factor relative to the interpolating
    Chebyshev series and the integration map a further 1/2, so a 4/d factor
    makes the assembled curve the true antiderivative (exact for integrands
    that are polynomials of degree < d).
    """
    v = np.asarray(values, dtype=float)
    return integrate_coefficients(dct_coefficients(v) * (4.0 / v.shape[0]))


def _constraint_offsets(degree: int, kind: str) -> np.ndarray:
    """g_k with q(z) = yhat + sum_k C_k (T_k(z) - g_k), k = 1..d-1."""
    if kind not in CONSTRAINTS:
        raise NumericError(f"unknown constraint kind {kind!r}; choose from {CONSTRAINTS}")
    ks = np.arange(1, degree)
    if kind == "median":
        # T_k(0): 0 for odd k, (-1)^(k/2) for even k
        return np.where(ks % 2 == 0, (-1.0) ** (ks // 2), 0.0)
    offs = np.zeros(degree - 1)
    odd = ks % 2 == 1
    offs[odd] = 2.0 / (ks[odd].astype(float) ** 2 - 4.0)
    return offs


def constrain_c0(coeffs, point_forecast: float, kind: str = "median") -> float:
    """Solve for C_0 so the curve's median (or mean) equals the point forecast."""
    c = np.asarray(coeffs, dtype=float)
    offsets = _constraint_offsets(c.shape[0] + 1, kind)
    return float(2.0 * point_forecast - 2.0 * np.dot(offsets, c))


def eval_quantile(c0: float, coeffs, taus):
    """Evaluate q(tau) = C_0/2 + sum_k C_k T_k(2 tau - 1)."""
    t = np.asarray(taus, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    if t.min() < 0.0 or t.max() > 1.0:
        raise NumericError("tau outside [0, 1]")
    c = np.asarray(coeffs, dtype=float)
    z = 2.0 * t - 1.0
    out = np.full(t.shape, 0.5 * c0)
    if c.shape[0]:
        out = out + c @ _chebyshev_table(c.shape[0], z)
    return float(out[0]) if scalar else out


def _net_outputs(nets, windows: np.ndarray, roots: np.ndarray, caches=None) -> np.ndarray:
    b = windows.shape[0]
    raw = np.empty((b, len(nets)))
    for j, net in enumerate(nets):
        x = np.concatenate([np.full((b, 1), roots[j]), windows], axis=1)
        out, cache = net.forward(x)
        raw[:, j] = out[:, 0]
        if caches is not None:
            caches.append(cache)
    return raw


def compute_coefficients_batch(nets, windows, point_forecasts, kind: str = "median"):
    """Assemble (C_0, C) per window row from the integrand nets.

    Net j always sees its own root as the leading input feature; raw outputs
    pass positive_transform, then the cosine analysis, normalization, and the
    integration map; C_0 comes from the requested constraint.
    """
    windows = np.atleast_2d(np.asarray(windows, dtype=float))
    yhat = np.atleast_1d(np.asarray(point_forecasts, dtype=float))
    degree = len(nets)
    if yhat.shape[0] != windows.shape[0]:
        raise DataError("one point forecast per window row required")
    roots = chebyshev_roots(degree)
    raw = _net_outputs(nets, windows, roots)
    integrand = positive_transform(raw)
    c_raw = integrand @ cosine_matrix(degree).T
    coeffs = (4.0 / degree) * c_raw @ integration_matrix(degree).T
    offsets = _constraint_offsets(degree, kind)
    c0 = 2.0 * yhat - 2.0 * coeffs @ offsets
    return c0, coeffs


def pinball_loss(truth, quantile, tau):
    """(y - q) (tau - 1[y < q]), elementwise."""
    y = np.asarray(truth, dtype=float)
    q = np.asarray(quantile, dtype=float)
    return (y - q) * (tau - (y < q))


@dataclass
class QuantileGenerator:
    """Trained integrand nets plus the scaling needed to emit data-space curves."""

    degree: int
    constraint: str
    window: int
    nets: list
    scaler: ZScore
    grid: tuple

    def coefficients(self, windows, point_forecasts):
        """Data-space (C_0 vector, C matrix) for each window row."""
        windows = np.atleast_2d(np.asarray(windows, dtype=float))
        if windows.shape[1] != self.window:
            raise DataError(f"windows must have {self.window} columns")
        yhat = np.atleast_1d(np.asarray(point_forecasts, dtype=float))
        c0, coeffs = compute_coefficients_batch(
            self.nets, self.scaler.transform(windows), self.scaler.transform(yhat), self.constraint
        )
        # q_data = mean + std * q_scaled, an increasing affine map
        return c0 * self.scaler.std + 2.0 * self.scaler.mean, coeffs * self.scaler.std

    def quantiles(self, windows, point_forecasts, taus) -> np.ndarray:
        """q(tau) rows in data units, one row per window."""
        taus = np.atleast_1d(np.asarray(taus, dtype=float))
        c0, coeffs = self.coefficients(windows, point_forecasts)
        if taus.min() < 0.0 or taus.max() > 1.0:
            raise NumericError("tau outside [0, 1]")
        z = 2.0 * taus - 1.0
        return 0.5 * c0[:, None] + coeffs @ _chebyshev_table(self.degree - 1, z)

    def quantile_fn(self, window, point_forecast):
        """Closure tau -> q(tau) for a single window (metrics-friendly)."""

        def fn(taus):
            return self.quantiles(np.asarray(window)[None, :], [point_forecast], taus)[0]

        return fn


def train_quantile(
    series,
    point_forecasts,
    target_indices,
    train_end: int,
    window: int,
    cfg: QuantileConfig,
    rng=None,
) -> QuantileGenerator:
    """Fit the integrand nets by pinball loss over the config quantile grid.

    ``point_forecasts`` aligns with ``target_indices``; windows end right
    before each target. Training happens in standardized space (scaler fit on
    the training span); the returned generator inverts on output.

    The d nets are replicates of one shared function whose outputs differ
    only through the root feature, so replicate gradients are summed into a
    single update. Tying the replicates keeps the integrand smooth across
    roots; untied replicates drift apart and the Chebyshev interpolant of an
    oscillating node profile can dip negative between roots, which would
    break monotonicity of the integrated curve.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    x = np.asarray(series, dtype=float)
    target_idx = np.asarray(target_indices, dtype=int)
    yhat_raw = np.asarray(point_forecasts, dtype=float)
    if yhat_raw.shape != target_idx.shape:
        raise DataError("point forecasts and target indices must align")
    if target_idx.min() < window:
        raise DataError("targets must leave room for a full window")
    if cfg.constraint not in CONSTRAINTS:
        raise NumericError(f"unknown constraint kind {cfg.constraint!r}")

    scaler = ZScore.fit(x[:train_end])
    idx = target_idx[:, None] + np.arange(-window, 0)[None, :]
    inputs = scaler.transform(x[idx])
    targets = scaler.transform(x[target_idx])
    yhat = scaler.transform(yhat_raw)

    degree = cfg.degree
    roots = chebyshev_roots(degree)
    taus = np.asarray(cfg.grid, dtype=float)
    z = 2.0 * taus - 1.0
    # q_s = yhat + sum_j K[s, j] * integrand_j with K folding the cosine
    # analysis, 4/d normalization, integration, and the C0 constraint
    basis = _chebyshev_table(degree - 1, z) - _constraint_offsets(degree, cfg.constraint)[:, None]
    coeff_map = (4.0 / degree) * integration_matrix(degree) @ cosine_matrix(degree)
    k_mat = basis.T @ coeff_map  # (n_taus, d)

    proto = DenseNet([window + 1, *cfg.hidden, 1], ("relu",) * len(cfg.hidden) + ("identity",), rng)
    state = adam_state(proto, cfg.lr)

    n = inputs.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch):
            sel = order[start : start + cfg.batch]
            b = sel.shape[0]
            # one stacked pass over all d root-variants of the batch rows;
            # backward sums over the stack, which is exactly the tied update
            x = np.empty((b, degree, window + 1))
            x[:, :, 0] = roots[None, :]
            x[:, :, 1:] = inputs[sel][:, None, :]
            out, cache = proto.forward(x.reshape(b * degree, window + 1))
            raw = out[:, 0].reshape(b, degree)
            integrand = positive_transform(raw)
            q = yhat[sel][:, None] + integrand @ k_mat.T
            below = targets[sel][:, None] < q
            # d(pinball)/dq summed over the grid, averaged over the batch
            dq = (below - taus[None, :]) / b
            d_raw = (dq @ k_mat) * positive_transform_grad(raw)
            if not np.all(np.isfinite(d_raw)):
                raise NumericError("non-finite quantile training gradient")
            grads, _ = proto.backward(cache, d_raw.reshape(b * degree, 1))
            adam_step(proto, grads, state)
    nets = [proto] + [proto.clone() for _ in range(degree - 1)]
    return QuantileGenerator(
        degree=degree,
        constraint=cfg.constraint,
        window=window,
        nets=nets,
        scaler=scaler,
        grid=tuple(float(t) for t in taus),
    )
