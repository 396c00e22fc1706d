"""Panel and hierarchy file IO, sliding windows, synthetic generators.

Panels travel as long CSV (series_id,timestamp,value); hierarchy specs are
small YAML documents with a vertex list plus signed parent/child edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
import yaml

from .errors import DataError, HierarchyError
from .hierarchy import Hierarchy, aggregate, build_hierarchy

TRAIN_FRACTION = 0.6
VALIDATION_FRACTION = 0.8


@dataclass(frozen=True)
class SeriesPanel:
    """Aligned series for every vertex with chronological split points.

    values[v] has length T for every vertex v; indices [0, train_end) are the
    training span, [train_end, val_end) validation, [val_end, T) test.
    """

    timestamps: np.ndarray
    values: dict[str, np.ndarray]
    train_end: int
    val_end: int

    @property
    def length(self) -> int:
        return self.timestamps.shape[0]

    def series(self, vertex: str) -> np.ndarray:
        return self.values[vertex]


def split_points(length: int) -> tuple[int, int]:
    return int(length * TRAIN_FRACTION), int(length * VALIDATION_FRACTION)


def load_panel_csv(path, hierarchy: Hierarchy) -> SeriesPanel:
    """Read a long-format CSV and align one series per hierarchy vertex."""
    try:
        frame = pd.read_csv(path, dtype={"series_id": str}, float_precision="round_trip")
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: no rows")
    if frame.empty:
        raise DataError(f"{path}: no rows")
    missing_cols = {"series_id", "timestamp", "value"} - set(frame.columns)
    if missing_cols:
        raise DataError(f"{path}: missing columns {sorted(missing_cols)}")
    values_numeric = pd.to_numeric(frame["value"], errors="coerce")
    if values_numeric.isna().any():
        bad = frame.loc[values_numeric.isna()].iloc[0]
        raise DataError(f"{path}: non-numeric value {bad['value']!r} in series {bad['series_id']}")
    frame = frame.assign(value=values_numeric.astype(float))

    grouped = {sid: g for sid, g in frame.groupby("series_id", sort=False)}
    for v in hierarchy.vertices:
        if v not in grouped:
            raise DataError(f"{path}: no rows for hierarchy vertex {v}")

    timestamps = None
    values: dict[str, np.ndarray] = {}
    for v in hierarchy.vertices:
        g = grouped[v].sort_values("timestamp", kind="stable")
        ts = g["timestamp"].to_numpy()
        if np.unique(ts).shape[0] != ts.shape[0]:
            raise DataError(f"{path}: duplicate timestamps in series {v}")
        if timestamps is None:
            timestamps = ts
        elif ts.shape[0] != timestamps.shape[0] or not np.array_equal(ts, timestamps):
            raise DataError(f"{path}: series {v} timestamps disagree with the panel (ragged lengths?)")
        values[v] = g["value"].to_numpy(dtype=float)

    if timestamps.shape[0] < 3:
        raise DataError(f"{path}: panel too short ({timestamps.shape[0]} rows per series)")
    train_end, val_end = split_points(timestamps.shape[0])
    return SeriesPanel(timestamps=timestamps, values=values, train_end=train_end, val_end=val_end)


def write_panel_csv(path, timestamps, values: dict[str, np.ndarray]) -> None:
    rows = []
    for sid, series in values.items():
        for ts, val in zip(timestamps, series):
            rows.append((sid, ts, repr(float(val))))
    frame = pd.DataFrame(rows, columns=["series_id", "timestamp", "value"])
    frame.to_csv(path, index=False)


def load_series_csv(path) -> np.ndarray:
    """Read a single-series long CSV (used by the online subcommand)."""
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: no rows")
    if frame.empty:
        raise DataError(f"{path}: no rows")
    ids = frame["series_id"].unique()
    if ids.shape[0] != 1:
        raise DataError(f"{path}: expected exactly one series, found {list(ids)}")
    frame = frame.sort_values("timestamp", kind="stable")
    values = pd.to_numeric(frame["value"], errors="coerce")
    if values.isna().any():
        raise DataError(f"{path}: non-numeric value in stream")
    return values.to_numpy(dtype=float)


def load_hierarchy_spec(path) -> Hierarchy:
    """Parse a YAML hierarchy spec: a vertices list and signed edges."""
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise HierarchyError(f"{path}: unparseable hierarchy spec: {exc}")
    if not isinstance(doc, dict) or "vertices" not in doc:
        raise HierarchyError(f"{path}: hierarchy spec needs a 'vertices' list")
    vertices = doc["vertices"]
    edges = []
    for item in doc.get("edges") or []:
        if not isinstance(item, dict) or "parent" not in item or "child" not in item:
            raise HierarchyError(f"{path}: edge entries need 'parent' and 'child': {item!r}")
        edges.append((item["parent"], item["child"], int(item.get("sign", 1))))
    return build_hierarchy(edges, vertices=vertices)


def write_hierarchy_spec(path, h: Hierarchy) -> None:
    doc = {
        "vertices": list(h.vertices),
        "edges": [{"parent": p, "child": c, "sign": s} for p, c, s in h.edges],
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


@dataclass(frozen=True)
class WindowBatch:
    """Sliding windows over one series.

    Row r holds series[r : r + window]; its target is series[r + window].
    The final row has no target inside the series and is flagged, so callers
    can still ask "given the latest window, what comes next?".
    """

    inputs: np.ndarray
    targets: np.ndarray
    has_target: np.ndarray
    window: int

    @property
    def rows(self) -> int:
        return self.inputs.shape[0]

    def supervised(self) -> tuple[np.ndarray, np.ndarray]:
        mask = self.has_target
        return self.inputs[mask], self.targets[mask]


def sliding_windows(series, window: int) -> WindowBatch:
    """All length-``window`` windows of the series plus next-step targets."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise DataError("sliding_windows expects a 1-D series")
    if window < 1:
        raise DataError(f"window must be >= 1, got {window}")
    if x.shape[0] < window:
        raise DataError(f"series of length {x.shape[0]} shorter than window {window}")
    rows = x.shape[0] - window + 1
    idx = np.arange(window)[None, :] + np.arange(rows)[:, None]
    inputs = x[idx]
    targets = np.full(rows, np.nan)
    targets[:-1] = x[window:]
    has_target = np.ones(rows, dtype=bool)
    has_target[-1] = False
    return WindowBatch(inputs=inputs, targets=targets, has_target=has_target, window=window)


def piecewise_value(x):
    """Three-branch target function with a jump discontinuity at x = 0.9."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    first = x < 0.8
    second = (x >= 0.8) & (x < 0.9)
    third = x >= 0.9
    out[first] = 3.0 + 3.0 * x[first] + 0.1 * np.sin(60.0 * x[first])
    out[second] = 3.0 + 3.0 * x[second] + 0.1 * x[second] ** 2 * np.sin(60.0 * x[second])
    out[third] = 10.0 + 5.0 * x[third] ** 4 + np.sin(60.0 * x[third])
    return out


def simulate_piecewise(n_samples: int = 2000, noise_sd: float = float(np.sqrt(0.05)), seed: int = 0) -> np.ndarray:
    """Sample the piecewise function on a uniform grid of [0, 1] plus noise.

    With the default n_samples the jump lands at index 1800 (90% of the
    stream). Bit-identical for a fixed (n_samples, noise_sd, seed).
    """
    if n_samples < 2:
        raise DataError("simulate_piecewise needs at least 2 samples")
    xs = np.linspace(0.0, 1.0, n_samples)
    clean = piecewise_value(xs)
    if noise_sd == 0:
        return clean
    rng = np.random.default_rng(seed)
    return clean + rng.normal(0.0, noise_sd, size=n_samples)


def simulate_hierarchical_panel(h: Hierarchy, n_samples: int, seed: int = 0):
    """Synthetic leaf processes aggregated through the hierarchy.

    Each leaf mixes a linear trend, a period-12 seasonal wave, and an AR(1)
    noise component with per-leaf parameters, so different experts shine on
    different vertices. Upper vertices are exact signed sums of the leaves,
    which keeps the truth panel coherent by construction.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n_samples, dtype=float)
    leaves = np.empty((h.m, n_samples))
    for i in range(h.m):
        level = rng.uniform(5.0, 15.0)
        trend = rng.uniform(-2.0, 4.0) / n_samples
        amp = rng.uniform(0.0, 3.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        phi = rng.uniform(0.2, 0.9)
        sigma = rng.uniform(0.1, 0.6)
        ar = np.empty(n_samples)
        ar[0] = rng.normal(0.0, sigma)
        shocks = rng.normal(0.0, sigma, size=n_samples)
        for k in range(1, n_samples):
            ar[k] = phi * ar[k - 1] + shocks[k]
        leaves[i] = level + trend * t + amp * np.sin(2.0 * np.pi * t / 12.0 + phase) + ar
    panel = aggregate(h, leaves)
    return {v: panel[i] for i, v in enumerate(h.row_order())}
