"""Point and distributional forecast accuracy measures."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError
from .hierarchy import Hierarchy, coherent_loss
from .quantile import pinball_loss

CRPS_GRID = np.linspace(0.01, 0.99, 99)


def mase(insample, truth, forecast) -> float:
    """Mean absolute error scaled by the in-sample naive one-step error, x100."""
    hist = np.asarray(insample, dtype=float)
    y = np.asarray(truth, dtype=float)
    yhat = np.asarray(forecast, dtype=float)
    if hist.shape[0] < 2:
        raise DataError("MASE needs at least two in-sample points")
    if y.shape != yhat.shape or y.ndim != 1 or y.shape[0] == 0:
        raise DataError("truth and forecast must be equal-length vectors")
    denom = np.mean(np.abs(np.diff(hist)))
    if denom <= 0.0:
        raise NumericError("constant in-sample series: MASE denominator is zero")
    return float(100.0 * np.mean(np.abs(y - yhat)) / denom)


def crps_from_quantiles(truth: float, quantile_fn, grid=None) -> float:
    """Approximate CRPS as twice the mean pinball loss over a dense tau grid."""
    taus = CRPS_GRID if grid is None else np.asarray(grid, dtype=float)
    q = np.asarray(quantile_fn(taus), dtype=float)
    if q.shape != taus.shape:
        raise DataError("quantile_fn must return one value per tau")
    if np.any(np.diff(q) < -1e-9):
        raise NumericError("quantile function is not monotone on the grid")
    return float(2.0 * np.mean(pinball_loss(truth, q, taus)))


def nrmse(truth, forecast) -> float:
    """Root mean squared error over the truth's population standard deviation."""
    y = np.asarray(truth, dtype=float)
    yhat = np.asarray(forecast, dtype=float)
    if y.shape != yhat.shape or y.ndim != 1 or y.shape[0] == 0:
        raise DataError("truth and forecast must be equal-length vectors")
    sd = float(np.std(y))
    if sd <= 0.0:
        raise NumericError("constant truth: NRMSE normalizer is zero")
    return float(np.sqrt(np.mean((y - yhat) ** 2)) / sd)


@dataclass
class EvalReport:
    """Per-vertex and per-level accuracy plus hierarchy coherence."""

    per_vertex: dict[str, dict[str, float]]
    per_level: dict[int, dict[str, float]]
    coherent: float
    seed: int
    config_hash: str
    metadata: dict = field(default_factory=dict)

    def table_rows(self):
        """Rows (scope, name, mase, crps, nrmse) for CSV output."""
        rows = []
        for vertex, vals in self.per_vertex.items():
            rows.append(("vertex", vertex, vals["mase"], vals.get("crps"), vals["nrmse"]))
        for level in sorted(self.per_level):
            vals = self.per_level[level]
            rows.append(("level", str(level), vals["mase"], vals.get("crps"), vals["nrmse"]))
        return rows


def build_eval_report(
    hierarchy: Hierarchy,
    insample: dict,
    truth: dict,
    forecast: dict,
    quantile_fns: dict | None = None,
    seed: int = 0,
    config_hash: str = "",
) -> EvalReport:
    """Score per-vertex forecasts and aggregate them by hierarchy level.

    ``quantile_fns`` maps a vertex to a tau -> quantile callable for the
    first test step; CRPS is reported for that one-step distribution and
    omitted when no callable is supplied.
    """
    per_vertex: dict[str, dict[str, float]] = {}
    for vertex in hierarchy.row_order():
        if vertex not in truth or vertex not in forecast:
            raise DataError(f"missing forecasts for vertex {vertex!r}")
        vals = {
            "mase": mase(insample[vertex], truth[vertex], forecast[vertex]),
            "nrmse": nrmse(truth[vertex], forecast[vertex]),
        }
        if quantile_fns and vertex in quantile_fns:
            vals["crps"] = crps_from_quantiles(float(truth[vertex][0]), quantile_fns[vertex])
        per_vertex[vertex] = vals

    per_level: dict[int, dict[str, float]] = {}
    for level in sorted(set(hierarchy.levels.values())):
        group = [v for v in hierarchy.row_order() if hierarchy.levels[v] == level]
        agg: dict[str, float] = {}
        for key in ("mase", "nrmse", "crps"):
            have = [per_vertex[v][key] for v in group if key in per_vertex[v]]
            if have:
                agg[key] = float(np.mean(have))
        per_level[level] = agg

    return EvalReport(
        per_vertex=per_vertex,
        per_level=per_level,
        coherent=coherent_loss(hierarchy, forecast),
        seed=seed,
        config_hash=config_hash,
    )
