"""End-to-end training, forecasting, and checkpoint persistence."""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .dataio import SeriesPanel
from .errors import ConfigError, DataError
from .gating import (
    GatingNetwork,
    MixtureForecaster,
    refit_experts_through_validation,
    train_hierarchy_bottom_up,
)
from .hierarchy import Hierarchy, build_hierarchy
from .neural import DenseNet, ZScore
from .experts import make_expert
from .quantile import QuantileGenerator, train_quantile

CHECKPOINT_FORMAT = 1
_QUANTILE_SEED_OFFSET = 15485863


@dataclass
class TrainedModel:
    """Everything a forecast or online run needs, in one bundle."""

    hierarchy: Hierarchy
    config: RunConfig
    forecasters: dict[str, MixtureForecaster]
    quantiles: dict[str, QuantileGenerator]


def train_pipeline(panel: SeriesPanel, hierarchy: Hierarchy, cfg: RunConfig) -> TrainedModel:
    """Train experts and gates bottom-up, then per-vertex quantile curves.

    Expert refitting through the validation span happens last, mirroring the
    offline procedure: point-forecast training artifacts (combined rolling
    forecasts) feed the quantile nets before experts see validation data.
    """
    forecasters = train_hierarchy_bottom_up(panel, hierarchy, cfg)
    quantiles: dict[str, QuantileGenerator] = {}
    if cfg.quantile.enabled:
        order = hierarchy.row_order()
        for idx, vertex in enumerate(order):
            fc = forecasters[vertex]
            rng = np.random.default_rng([cfg.seed, _QUANTILE_SEED_OFFSET + idx])
            quantiles[vertex] = train_quantile(
                panel.series(vertex),
                fc.insample_combined,
                fc.insample_indices,
                panel.train_end,
                cfg.window,
                cfg.quantile,
                rng,
            )
    if cfg.experts.refit_on_validation:
        refit_experts_through_validation(panel, forecasters, cfg)
    return TrainedModel(hierarchy=hierarchy, config=cfg, forecasters=forecasters, quantiles=quantiles)


def forecast_model(model: TrainedModel, panel: SeriesPanel, horizon: int, from_index: int | None = None):
    """Recursive point forecasts plus per-step quantile rows for each vertex.

    Forecasts start right after ``from_index`` (default: end of the panel).
    Returns (points, quantile_rows) dicts; quantile_rows values are
    (horizon, len(grid)) arrays or absent when no generator was trained.
    """
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    points: dict[str, np.ndarray] = {}
    quants: dict[str, np.ndarray] = {}
    for vertex, fc in model.forecasters.items():
        series = panel.series(vertex)
        if from_index is not None:
            series = series[:from_index]
        qgen = model.quantiles.get(vertex)
        hist = list(series)
        rows = []
        preds = []
        for _ in range(horizon):
            arr = np.asarray(hist)
            weights = fc.gate.weights(arr[-fc.gate.window :])
            fcst = np.array([e.predict_next(arr) for e in fc.experts])
            yhat = float(weights @ fcst)
            if qgen is not None:
                rows.append(qgen.quantiles(arr[-qgen.window :][None, :], [yhat], qgen.grid)[0])
            preds.append(yhat)
            hist.append(yhat)
        points[vertex] = np.array(preds)
        if rows:
            quants[vertex] = np.vstack(rows)
    return points, quants


def _expert_state(expert):
    meta = {"kind": expert.kind, "fit_end": expert.fit_end}
    arrays: dict[str, np.ndarray] = {}
    if expert.kind == "ar_ls":
        meta["order"] = expert.order
        arrays["coefficients"] = expert.coefficients
    elif expert.kind == "exp_smooth":
        meta.update(holt=expert.holt, alpha=expert.alpha, beta=expert.beta)
    elif expert.kind == "seasonal_naive":
        meta["period"] = expert.period
        arrays["last_season"] = expert.last_season
    elif expert.kind == "moving_average":
        meta["window"] = expert.window
    elif expert.kind == "window_net":
        meta.update(
            window=expert.window,
            hidden=list(expert.hidden),
            epochs=expert.epochs,
            lr=expert.lr,
            batch=expert.batch,
            scaler_mean=expert.scaler.mean,
            scaler_std=expert.scaler.std,
        )
        arrays.update(expert.net.parameter_arrays())
    else:
        raise ConfigError(f"cannot checkpoint expert kind {expert.kind!r}")
    return meta, arrays


def _restore_expert(meta, arrays):
    kind = meta["kind"]
    if kind == "ar_ls":
        expert = make_expert(kind, order=meta["order"])
        expert.coefficients = np.asarray(arrays["coefficients"], dtype=float)
    elif kind == "exp_smooth":
        expert = make_expert(kind, holt=meta["holt"])
        expert.alpha, expert.beta = meta["alpha"], meta["beta"]
    elif kind == "seasonal_naive":
        expert = make_expert(kind, period=meta["period"])
        expert.last_season = np.asarray(arrays["last_season"], dtype=float)
    elif kind == "moving_average":
        expert = make_expert(kind, window=meta["window"])
    elif kind == "window_net":
        expert = make_expert(
            kind,
            window=meta["window"],
            hidden=tuple(meta["hidden"]),
            epochs=meta["epochs"],
            lr=meta["lr"],
            batch=meta["batch"],
        )
        expert.scaler = ZScore(mean=meta["scaler_mean"], std=meta["scaler_std"])
        dims = (meta["window"], *meta["hidden"], 1)
        acts = ("tanh",) * len(meta["hidden"]) + ("identity",)
        expert.net = DenseNet(dims, acts, np.random.default_rng(0))
        expert.net.load_parameter_arrays(arrays)
    else:
        raise ConfigError(f"unknown expert kind {kind!r} in checkpoint")
    expert.fit_end = meta["fit_end"]
    return expert


def _rebuild_net(meta, arrays) -> DenseNet:
    net = DenseNet(tuple(meta["dims"]), tuple(meta["activations"]), np.random.default_rng(0))
    net.load_parameter_arrays(arrays)
    return net


def save_checkpoint(path: str, model: TrainedModel) -> None:
    """Write manifest.json plus arrays.npz atomically (tmp dir, then rename)."""
    parent = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(parent, exist_ok=True)
    manifest = {
        "format_version": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "hierarchy": {
            "vertices": list(model.hierarchy.vertices),
            "edges": [list(e) for e in model.hierarchy.edges],
        },
        "vertices": {},
    }
    arrays: dict[str, np.ndarray] = {}
    for vertex, fc in model.forecasters.items():
        gate = fc.gate
        entry = {
            "experts": [],
            "gate": {
                "window": gate.window,
                "n_experts": gate.n_experts,
                "lam": gate.lam,
                "scaler_mean": gate.scaler.mean,
                "scaler_std": gate.scaler.std,
                "dims": list(gate.net.dims),
                "activations": list(gate.net.activations),
            },
        }
        for i, expert in enumerate(fc.experts):
            meta, ex_arrays = _expert_state(expert)
            entry["experts"].append(meta)
            for name, arr in ex_arrays.items():
                arrays[f"{vertex}/expert{i}/{name}"] = arr
        for name, arr in gate.net.parameter_arrays().items():
            arrays[f"{vertex}/gate/{name}"] = arr
        if fc.insample_indices is not None:
            arrays[f"{vertex}/insample_indices"] = np.asarray(fc.insample_indices)
            arrays[f"{vertex}/insample_combined"] = np.asarray(fc.insample_combined)
        qgen = model.quantiles.get(vertex)
        if qgen is not None:
            entry["quantile"] = {
                "degree": qgen.degree,
                "constraint": qgen.constraint,
                "window": qgen.window,
                "grid": list(qgen.grid),
                "scaler_mean": qgen.scaler.mean,
                "scaler_std": qgen.scaler.std,
                "dims": list(qgen.nets[0].dims),
                "activations": list(qgen.nets[0].activations),
            }
            for j, net in enumerate(qgen.nets):
                for name, arr in net.parameter_arrays().items():
                    arrays[f"{vertex}/quantile/net{j}/{name}"] = arr
        manifest["vertices"][vertex] = entry

    tmp = tempfile.mkdtemp(prefix=".ckpt-", dir=parent)
    try:
        with open(os.path.join(tmp, "manifest.json"), "w") as fh:
            # numpy scalars (grid alphas, int indices) serialize via .item()
            json.dump(manifest, fh, indent=1, sort_keys=True, default=lambda o: o.item())
        np.savez(os.path.join(tmp, "arrays.npz"), **arrays)
        if os.path.isdir(path):
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def load_checkpoint(path: str) -> TrainedModel:
    """Rebuild a TrainedModel from a checkpoint directory."""
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise DataError(f"no checkpoint manifest at {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != CHECKPOINT_FORMAT:
        raise DataError("unsupported checkpoint format version")
    with np.load(os.path.join(path, "arrays.npz")) as blob:
        arrays = {k: blob[k] for k in blob.files}

    cfg = RunConfig.from_dict(manifest["config"])
    edges = [(p, c, int(s)) for p, c, s in manifest["hierarchy"]["edges"]]
    hierarchy = build_hierarchy(edges, vertices=manifest["hierarchy"]["vertices"])

    def sub(prefix):
        plen = len(prefix)
        return {k[plen:]: v for k, v in arrays.items() if k.startswith(prefix)}

    forecasters: dict[str, MixtureForecaster] = {}
    quantiles: dict[str, QuantileGenerator] = {}
    for vertex, entry in manifest["vertices"].items():
        experts = [
            _restore_expert(meta, sub(f"{vertex}/expert{i}/"))
            for i, meta in enumerate(entry["experts"])
        ]
        g = entry["gate"]
        gate = GatingNetwork(
            net=_rebuild_net(g, sub(f"{vertex}/gate/")),
            window=g["window"],
            n_experts=g["n_experts"],
            lam=g["lam"],
            scaler=ZScore(mean=g["scaler_mean"], std=g["scaler_std"]),
        )
        idx_key = f"{vertex}/insample_indices"
        forecasters[vertex] = MixtureForecaster(
            vertex=vertex,
            experts=experts,
            gate=gate,
            insample_indices=arrays.get(idx_key),
            insample_combined=arrays.get(f"{vertex}/insample_combined"),
        )
        q = entry.get("quantile")
        if q is not None:
            nets = [
                _rebuild_net(q, sub(f"{vertex}/quantile/net{j}/")) for j in range(q["degree"])
            ]
            quantiles[vertex] = QuantileGenerator(
                degree=q["degree"],
                constraint=q["constraint"],
                window=q["window"],
                nets=nets,
                scaler=ZScore(mean=q["scaler_mean"], std=q["scaler_std"]),
                grid=tuple(q["grid"]),
            )
    return TrainedModel(hierarchy=hierarchy, config=cfg, forecasters=forecasters, quantiles=quantiles)
