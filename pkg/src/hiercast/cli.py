"""Command-line front end: simulate, train, forecast, evaluate, reconcile, online.

Every subcommand reads an optional YAML config (--config), honors --seed and
--jobs overrides, and writes its artifacts under --out. Exit codes: 0 on
success, 2 for configuration problems, 3 for data problems, 4 for numerical
failures.
"""

from __future__ import annotations

import argparse
import json
import os
import string
import sys

import numpy as np
import pandas as pd

from .changepoint import online_loop
from .config import RunConfig
from .dataio import (
    load_panel_csv,
    load_hierarchy_spec,
    load_series_csv,
    simulate_hierarchical_panel,
    simulate_piecewise,
    write_hierarchy_spec,
    write_panel_csv,
)
from .errors import ConfigError, DataError, NumericError
from .gating import rolling_matrix, train_hierarchy_bottom_up
from .hierarchy import Hierarchy, build_hierarchy, coherent_loss, summing_matrix
from .metrics import build_eval_report, mase
from .pipeline import forecast_model, load_checkpoint, save_checkpoint, train_pipeline
from .reconcile import METHODS, bu_plan, erm_plan, mint_plan, ols_plan, reconcile

SWEEP_LAMBDAS = (0.0, 0.01, 0.1, 0.5, 1.0, 10.0)


def _load_config(args) -> RunConfig:
    if args.config:
        if not os.path.isfile(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        cfg = RunConfig.load_yaml(args.config)
    else:
        cfg = RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.jobs is not None:
        cfg.jobs = args.jobs
    return cfg


def _require_file(path, what: str) -> str:
    if not os.path.isfile(path):
        raise DataError(f"{what} not found: {path}")
    return path


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _say(msg: str) -> None:
    print(msg)


# ---------------------------------------------------------------- simulate


def _branching_edges(branching) -> list:
    """Name a uniform tree: total -> a, b, ... -> aa, ab, ... and so on."""
    edges = []
    frontier = ["total"]
    for width in branching:
        width = int(width)
        if not 1 <= width <= 26:
            raise ConfigError(f"branching factors must be in [1, 26], got {width}")
        nxt = []
        for parent in frontier:
            for i in range(width):
                letter = string.ascii_lowercase[i]
                child = letter if parent == "total" else parent + letter
                edges.append((parent, child, 1))
                nxt.append(child)
        frontier = nxt
    if not edges:
        raise ConfigError("branching must name at least one level")
    return edges


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = _outdir(args)
    sim = cfg.simulate
    if sim.n_samples < 2:
        raise ConfigError(f"simulate.n_samples must be >= 2, got {sim.n_samples}")
    if sim.kind == "piecewise":
        stream = simulate_piecewise(sim.n_samples, noise_sd=sim.noise_sd, seed=cfg.seed)
        path = os.path.join(out, "stream.csv")
        write_panel_csv(path, np.arange(sim.n_samples), {"stream": stream})
        _say(f"wrote {path} ({sim.n_samples} rows)")
    elif sim.kind == "hierarchical":
        h = build_hierarchy(_branching_edges(sim.branching))
        values = simulate_hierarchical_panel(h, sim.n_samples, seed=cfg.seed)
        hpath = os.path.join(out, "hierarchy.yaml")
        ppath = os.path.join(out, "panel.csv")
        write_hierarchy_spec(hpath, h)
        write_panel_csv(ppath, np.arange(sim.n_samples), values)
        _say(f"wrote {hpath} ({h.n} vertices)")
        _say(f"wrote {ppath} ({h.n} series x {sim.n_samples} rows)")
    else:
        raise ConfigError(f"unknown simulate.kind {sim.kind!r}")
    return 0


# ------------------------------------------------------------------- train


def _load_inputs(args):
    hierarchy = load_hierarchy_spec(_require_file(args.hierarchy, "hierarchy spec"))
    panel = load_panel_csv(_require_file(args.panel, "panel CSV"), hierarchy)
    return hierarchy, panel


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _outdir(args)
    hierarchy, panel = _load_inputs(args)
    model = train_pipeline(panel, hierarchy, cfg)

    ckpt = os.path.join(out, "checkpoint")
    save_checkpoint(ckpt, model)
    cfg.dump_yaml(os.path.join(out, "run_config.yaml"))

    rows = []
    for vertex in hierarchy.row_order():
        hist = model.forecasters[vertex].history
        if hist is None:
            continue
        for epoch, (loss, w) in enumerate(zip(hist.loss, hist.weights)):
            rows.append({"vertex": vertex, "epoch": epoch, "loss": loss}
                        | {f"w_{i}": wi for i, wi in enumerate(w)})
    hist_path = os.path.join(out, "gate_history.csv")
    pd.DataFrame(rows).to_csv(hist_path, index=False)

    meta = {
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "vertices": hierarchy.n,
        "panel_rows": panel.length,
        "train_end": panel.train_end,
        "val_end": panel.val_end,
        "quantile_nets": len(model.quantiles),
    }
    with open(os.path.join(out, "run_meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    _say(f"wrote {ckpt} ({hierarchy.n} vertices, config {meta['config_hash']})")
    _say(f"wrote {hist_path}")
    return 0


# ---------------------------------------------------------------- forecast


def cmd_forecast(args) -> int:
    _load_config(args)
    out = _outdir(args)
    model = load_checkpoint(args.checkpoint)
    panel = load_panel_csv(_require_file(args.panel, "panel CSV"), model.hierarchy)
    horizon = args.horizon if args.horizon is not None else model.config.horizon
    points, quants = forecast_model(model, panel, horizon)

    rows = [
        {"series_id": v, "step": k + 1, "value": val}
        for v in model.hierarchy.row_order()
        for k, val in enumerate(points[v])
    ]
    ppath = os.path.join(out, "forecasts.csv")
    pd.DataFrame(rows).to_csv(ppath, index=False)
    _say(f"wrote {ppath} ({len(rows)} rows, horizon {horizon})")

    if quants:
        grid = model.config.quantile.grid
        qrows = [
            {"series_id": v, "step": k + 1, "tau": tau, "value": quants[v][k, j]}
            for v in model.hierarchy.row_order()
            if v in quants
            for k in range(horizon)
            for j, tau in enumerate(grid)
        ]
        qpath = os.path.join(out, "quantiles.csv")
        pd.DataFrame(qrows).to_csv(qpath, index=False)
        _say(f"wrote {qpath} ({len(qrows)} rows)")
    else:
        _say("no quantile generators in checkpoint; skipped quantiles.csv")
    return 0


# ---------------------------------------------------------------- evaluate


def _copy_config(cfg: RunConfig) -> RunConfig:
    return RunConfig.from_dict(cfg.to_dict())


def _test_forecasts(model, panel):
    """Rolling one-step forecasts over the test span for every vertex.

    Returns (combined, expert_matrix) dicts; expert rows follow the roster.
    """
    combined = {}
    expert_f = {}
    for vertex, fc in model.forecasters.items():
        series = panel.series(vertex)
        block = rolling_matrix(fc.experts, series, panel.val_end, panel.length)
        expert_f[vertex] = block
        combined[vertex] = fc.combined_rolling(series, panel.val_end, panel.length, expert_forecasts=block)
    return combined, expert_f


def cmd_evaluate(args) -> int:
    out = _outdir(args)
    model = load_checkpoint(args.checkpoint)
    # sweep retraining defaults to the checkpoint's own settings
    cfg = _load_config(args) if args.config else _copy_config(model.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.jobs is not None:
        cfg.jobs = args.jobs
    hierarchy = model.hierarchy
    panel = load_panel_csv(_require_file(args.panel, "panel CSV"), hierarchy)
    if panel.val_end >= panel.length:
        raise DataError("panel has no test span to evaluate on")

    combined, expert_f = _test_forecasts(model, panel)
    insample = {v: panel.series(v)[: panel.val_end] for v in hierarchy.vertices}
    truth = {v: panel.series(v)[panel.val_end :] for v in hierarchy.vertices}

    quantile_fns = {}
    for vertex, qgen in model.quantiles.items():
        window = panel.series(vertex)[panel.val_end - qgen.window : panel.val_end]
        quantile_fns[vertex] = qgen.quantile_fn(window, combined[vertex][0])

    report = build_eval_report(
        hierarchy,
        insample,
        truth,
        combined,
        quantile_fns=quantile_fns or None,
        seed=cfg.seed,
        config_hash=model.config.config_hash(),
    )
    frame = pd.DataFrame(report.table_rows(), columns=["scope", "name", "mase", "crps", "nrmse"])
    vpath = os.path.join(out, "eval_vertices.csv")
    lpath = os.path.join(out, "eval_levels.csv")
    frame[frame["scope"] == "vertex"].to_csv(vpath, index=False)
    frame[frame["scope"] == "level"].to_csv(lpath, index=False)

    comparison = _comparison_rows(model, panel, insample, truth, combined, expert_f)
    cpath = os.path.join(out, "comparison.csv")
    pd.DataFrame(comparison).to_csv(cpath, index=False)

    with open(os.path.join(out, "eval_meta.json"), "w") as fh:
        json.dump(
            {"coherent_loss": report.coherent, "seed": report.seed, "config_hash": report.config_hash},
            fh,
            indent=1,
            sort_keys=True,
        )
    _say(f"wrote {vpath}, {lpath}, {cpath} (coherent loss {report.coherent:.6g})")

    if args.lambda_sweep:
        spath = os.path.join(out, "lambda_sweep.csv")
        sweep = _lambda_sweep(cfg, hierarchy, panel, insample, truth)
        pd.DataFrame(sweep).to_csv(spath, index=False)
        _say(f"wrote {spath} ({len(sweep)} rows)")
    return 0


def _comparison_rows(model, panel, insample, truth, combined, expert_f):
    """Mean test MASE across vertices: mixture vs equal average vs each expert."""
    order = model.hierarchy.row_order()
    kinds = [e.kind for e in model.forecasters[order[0]].experts]

    def mean_mase(forecast_for):
        scores = [mase(insample[v], truth[v], forecast_for(v)) for v in order]
        return float(np.mean(scores)), float(np.std(scores))

    rows = []
    for label, fn in (
        ("mixture", lambda v: combined[v]),
        ("average", lambda v: expert_f[v].mean(axis=0)),
        *((kind, lambda v, i=i: expert_f[v][i]) for i, kind in enumerate(kinds)),
    ):
        mean, sd = mean_mase(fn)
        rows.append({"model": label, "mase_mean": mean, "mase_sd": sd})
    return rows


def _lambda_sweep(cfg, hierarchy, panel, insample, truth):
    """Retrain gates across the penalty grid and score test coherence."""
    rows = []
    for lam in SWEEP_LAMBDAS:
        run = _copy_config(cfg)
        run.gate.lam = lam
        run.quantile.enabled = False
        forecasters = train_hierarchy_bottom_up(panel, hierarchy, run)
        fc_map = {}
        for vertex, fc in forecasters.items():
            series = panel.series(vertex)
            fc_map[vertex] = fc.combined_rolling(series, panel.val_end, panel.length)
        scores = [mase(insample[v], truth[v], fc_map[v]) for v in hierarchy.vertices]
        rows.append(
            {
                "lambda": lam,
                "coherent_loss": coherent_loss(hierarchy, fc_map),
                "mase_mean": float(np.mean(scores)),
            }
        )
    return rows


# --------------------------------------------------------------- reconcile


def _load_matrix(path, hierarchy: Hierarchy):
    """Read a long CSV into an (n, T) matrix ordered like the summing matrix."""
    try:
        frame = pd.read_csv(path, dtype={"series_id": str}, float_precision="round_trip")
    except (FileNotFoundError, pd.errors.EmptyDataError):
        raise DataError(f"{path}: missing or empty CSV")
    needed = {"series_id", "timestamp", "value"} - set(frame.columns)
    if needed:
        raise DataError(f"{path}: missing columns {sorted(needed)}")
    groups = {sid: g.sort_values("timestamp", kind="stable") for sid, g in frame.groupby("series_id", sort=False)}
    order = hierarchy.row_order()
    missing = [v for v in order if v not in groups]
    if missing:
        raise DataError(f"{path}: no rows for vertices {missing}")
    lengths = {len(g) for g in groups.values()}
    if len(lengths) != 1:
        raise DataError(f"{path}: ragged series lengths {sorted(lengths)}")
    timestamps = groups[order[0]]["timestamp"].to_numpy()
    matrix = np.vstack([groups[v]["value"].to_numpy(dtype=float) for v in order])
    if not np.all(np.isfinite(matrix)):
        raise DataError(f"{path}: non-finite values")
    return matrix, timestamps


def _parse_alpha(raw):
    if raw == "auto":
        return raw
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"--alpha must be a float or 'auto', got {raw!r}")


def cmd_reconcile(args) -> int:
    _load_config(args)
    out = _outdir(args)
    hierarchy = load_hierarchy_spec(_require_file(args.hierarchy, "hierarchy spec"))
    S = summing_matrix(hierarchy)
    base, timestamps = _load_matrix(args.base, hierarchy)

    method = args.method
    if method == "bu":
        plan = bu_plan(S)
    elif method == "ols":
        plan = ols_plan(S)
    elif method.startswith("mint_"):
        if not args.errors:
            raise ConfigError(f"--errors CSV is required for method {method}")
        errors, _ = _load_matrix(args.errors, hierarchy)
        plan = mint_plan(S, errors.T, kind=method.split("_", 1)[1], alpha=_parse_alpha(args.alpha))
    elif method == "erm":
        if not (args.fit_base and args.fit_truth):
            raise ConfigError("--fit-base and --fit-truth CSVs are required for method erm")
        fit_base, _ = _load_matrix(args.fit_base, hierarchy)
        fit_truth, _ = _load_matrix(args.fit_truth, hierarchy)
        plan = erm_plan(S, fit_base.T, fit_truth.T)
    else:
        raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")

    fixed = reconcile(plan, base)
    path = os.path.join(out, "reconciled.csv")
    write_panel_csv(path, timestamps, {v: fixed[i] for i, v in enumerate(hierarchy.row_order())})
    for note in plan.notes:
        _say(f"note: {note}")
    _say(f"wrote {path} (method {method})")
    return 0


# ------------------------------------------------------------------ online


def _stream_length(path) -> int:
    if not os.path.isfile(path):
        raise DataError(f"stream file not found: {path}")
    with open(path) as fh:
        return max(0, sum(1 for line in fh if line.strip()) - 1)


def cmd_online(args) -> int:
    out = _outdir(args)
    model = load_checkpoint(args.checkpoint)
    run = _load_config(args) if args.config else _copy_config(model.config)
    if args.seed is not None:
        run.seed = args.seed
    if args.no_mitigation:
        run.online.mitigation = False

    vertex = args.vertex or model.hierarchy.root
    if vertex not in model.forecasters:
        raise ConfigError(f"vertex {vertex!r} not in checkpoint (has {sorted(model.forecasters)})")
    forecaster = model.forecasters[vertex]
    qgen = model.quantiles.get(vertex)

    rpath = os.path.join(out, "online_records.csv")
    n_weights = forecaster.gate.n_experts
    columns = ["t", "y", "yhat", "residual", "map_runlength", "detected"] + [
        f"w_{i}" for i in range(n_weights)
    ]
    if _stream_length(args.stream) == 0:
        pd.DataFrame(columns=columns).to_csv(rpath, index=False)
        _say(f"empty stream; wrote {rpath} (0 records)")
        return 0

    stream = load_series_csv(args.stream)
    records = online_loop(forecaster, qgen, stream, run, start=args.start)
    rows = []
    for r in records:
        row = {
            "t": r.t,
            "y": r.y,
            "yhat": r.yhat,
            "residual": r.residual,
            "map_runlength": r.map_runlength,
            "detected": int(r.detected),
        }
        row.update({f"w_{i}": w for i, w in enumerate(r.weights)})
        rows.append(row)
    pd.DataFrame(rows, columns=columns).to_csv(rpath, index=False)
    n_hits = sum(r.detected for r in records)
    _say(f"wrote {rpath} ({len(rows)} records, {n_hits} detections)")

    if qgen is not None:
        qrows = [
            {"t": r.t, "tau": tau, "value": val}
            for r in records
            for tau, val in zip(qgen.grid, r.quantiles)
        ]
        qpath = os.path.join(out, "online_quantiles.csv")
        pd.DataFrame(qrows).to_csv(qpath, index=False)
        _say(f"wrote {qpath} ({len(qrows)} rows)")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="override config seed")
    common.add_argument("--jobs", type=int, help="override config worker count")
    common.add_argument("--out", default="out", help="output directory (default: out)")

    parser = argparse.ArgumentParser(
        prog="hiercast",
        description="Hierarchical mixture-of-experts forecasting with quantile "
        "curves, reconciliation, and online change-point mitigation.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic panel or stream")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", parents=[common], help="train experts, gates, and quantile nets")
    p.add_argument("--hierarchy", required=True, help="hierarchy YAML")
    p.add_argument("--panel", required=True, help="long-format panel CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", parents=[common], help="h-step forecasts from a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--panel", required=True, help="panel CSV supplying history")
    p.add_argument("--horizon", type=int, help="steps ahead (default: config horizon)")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on the test span")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--panel", required=True, help="panel CSV with a test span")
    p.add_argument(
        "--lambda-sweep",
        action="store_true",
        help=f"retrain gates over lambda grid {SWEEP_LAMBDAS} and tabulate coherence",
    )
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("reconcile", parents=[common], help="project base forecasts onto the tree")
    p.add_argument("--hierarchy", required=True, help="hierarchy YAML")
    p.add_argument("--base", required=True, help="base forecasts CSV (long format)")
    p.add_argument("--method", default="ols", choices=METHODS)
    p.add_argument("--errors", help="validation residuals CSV (mint_* methods)")
    p.add_argument("--alpha", default=0.1, help="mint_shr shrinkage weight or 'auto'")
    p.add_argument("--fit-base", help="training base forecasts CSV (erm)")
    p.add_argument("--fit-truth", help="training truths CSV (erm)")
    p.set_defaults(func=cmd_reconcile)

    p = sub.add_parser("online", parents=[common], help="stream one vertex with change-point mitigation")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--stream", required=True, help="single-series CSV")
    p.add_argument("--vertex", help="vertex to run (default: hierarchy root)")
    p.add_argument("--start", type=int, help="first target index (default: end of training span)")
    p.add_argument("--no-mitigation", action="store_true", help="disable weight shrinkage on detection")
    p.set_defaults(func=cmd_online)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
