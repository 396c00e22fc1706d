import filecmp
import json
import os

import numpy as np
import pandas as pd
import pytest

from hiercast.cli import main
from hiercast.config import RunConfig
from hiercast.dataio import load_series_csv, write_panel_csv


def write_tiny_config(path, **overrides):
    cfg = RunConfig()
    cfg.seed = 1
    cfg.window = 8
    cfg.experts.roster = ("ar_ls", "exp_smooth", "moving_average")
    cfg.experts.ar_order = 2
    cfg.experts.ma_window = 4
    cfg.gate.epochs = 25
    cfg.gate.lr = 1e-3
    cfg.quantile.degree = 6
    cfg.quantile.hidden = (8,)
    cfg.quantile.epochs = 30
    cfg.quantile.lr = 1e-3
    cfg.quantile.batch = 32
    cfg.simulate.kind = "hierarchical"
    cfg.simulate.n_samples = 160
    cfg.simulate.branching = (2,)
    for key, val in overrides.items():
        node = cfg
        *parents, leaf = key.split(".")
        for p in parents:
            node = getattr(node, p)
        setattr(node, leaf, val)
    cfg.dump_yaml(path)
    return cfg


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One simulate + train chain shared by the downstream command tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = str(root / "cfg.yaml")
    write_tiny_config(cfg_path)
    sim = str(root / "sim")
    run = str(root / "run")
    assert main(["simulate", "--config", cfg_path, "--out", sim]) == 0
    assert (
        main(
            [
                "train",
                "--config",
                cfg_path,
                "--hierarchy",
                os.path.join(sim, "hierarchy.yaml"),
                "--panel",
                os.path.join(sim, "panel.csv"),
                "--out",
                run,
            ]
        )
        == 0
    )
    return {
        "root": root,
        "config": cfg_path,
        "hierarchy": os.path.join(sim, "hierarchy.yaml"),
        "panel": os.path.join(sim, "panel.csv"),
        "checkpoint": os.path.join(run, "checkpoint"),
        "run": run,
    }


def test_simulate_is_byte_deterministic(tmp_path):
    cfg = str(tmp_path / "cfg.yaml")
    write_tiny_config(cfg)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    assert filecmp.cmp(tmp_path / "a" / "panel.csv", tmp_path / "b" / "panel.csv", shallow=False)
    assert main(["simulate", "--config", cfg, "--seed", "9", "--out", str(tmp_path / "c")]) == 0
    assert not filecmp.cmp(tmp_path / "a" / "panel.csv", tmp_path / "c" / "panel.csv", shallow=False)


def test_simulate_piecewise_stream(tmp_path):
    cfg = str(tmp_path / "cfg.yaml")
    write_tiny_config(cfg, **{"simulate.kind": "piecewise", "simulate.n_samples": 60})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    stream = load_series_csv(tmp_path / "s" / "stream.csv")
    assert stream.shape == (60,)
    assert np.all(np.isfinite(stream))


def test_train_writes_artifacts(workspace):
    run = workspace["run"]
    for name in ("checkpoint/manifest.json", "checkpoint/arrays.npz", "gate_history.csv", "run_config.yaml", "run_meta.json"):
        assert os.path.exists(os.path.join(run, name)), name
    hist = pd.read_csv(os.path.join(run, "gate_history.csv"))
    assert {"vertex", "epoch", "loss", "w_0", "w_1", "w_2"} <= set(hist.columns)
    assert set(hist["vertex"]) == {"total", "a", "b"}
    with open(os.path.join(run, "run_meta.json")) as fh:
        meta = json.load(fh)
    assert meta["vertices"] == 3 and meta["quantile_nets"] == 3

    echoed = RunConfig.load_yaml(os.path.join(run, "run_config.yaml"))
    assert echoed.config_hash() == meta["config_hash"]


def test_forecast_outputs_and_median_pin(workspace, tmp_path):
    out = str(tmp_path / "fc")
    code = main(
        ["forecast", "--checkpoint", workspace["checkpoint"], "--panel", workspace["panel"], "--horizon", "4", "--out", out]
    )
    assert code == 0
    points = pd.read_csv(os.path.join(out, "forecasts.csv"))
    quants = pd.read_csv(os.path.join(out, "quantiles.csv"))
    assert len(points) == 3 * 4
    assert len(quants) == 3 * 4 * 5
    merged = quants[quants["tau"] == 0.5].merge(points, on=["series_id", "step"], suffixes=("_q", "_p"))
    scale = np.maximum(np.abs(merged["value_p"]), 1.0)
    assert np.all(np.abs(merged["value_q"] - merged["value_p"]) / scale < 1e-9)
    # quantile values non-decreasing in tau within each (vertex, step)
    for _, g in quants.groupby(["series_id", "step"]):
        vals = g.sort_values("tau")["value"].to_numpy()
        assert np.all(np.diff(vals) >= -1e-9)


def test_evaluate_writes_tables(workspace, tmp_path):
    out = str(tmp_path / "ev")
    code = main(["evaluate", "--checkpoint", workspace["checkpoint"], "--panel", workspace["panel"], "--out", out])
    assert code == 0
    verts = pd.read_csv(os.path.join(out, "eval_vertices.csv"))
    levels = pd.read_csv(os.path.join(out, "eval_levels.csv"))
    comp = pd.read_csv(os.path.join(out, "comparison.csv"))
    assert set(verts["name"]) == {"total", "a", "b"}
    assert len(levels) == 2
    assert np.all(np.isfinite(verts[["mase", "crps", "nrmse"]].to_numpy()))
    assert set(comp["model"]) == {"mixture", "average", "ar_ls", "exp_smooth", "moving_average"}
    with open(os.path.join(out, "eval_meta.json")) as fh:
        meta = json.load(fh)
    assert meta["coherent_loss"] >= 0.0


def test_lambda_sweep_table(workspace, tmp_path):
    out = str(tmp_path / "sw")
    code = main(
        ["evaluate", "--checkpoint", workspace["checkpoint"], "--panel", workspace["panel"], "--lambda-sweep", "--out", out]
    )
    assert code == 0
    sweep = pd.read_csv(os.path.join(out, "lambda_sweep.csv"))
    assert list(sweep["lambda"]) == [0.0, 0.01, 0.1, 0.5, 1.0, 10.0]
    assert np.all(sweep["coherent_loss"].to_numpy() >= 0.0)
    assert np.all(np.isfinite(sweep["mase_mean"].to_numpy()))


def _jump_stream(workspace, path):
    panel = pd.read_csv(workspace["panel"])
    total = panel[panel.series_id == "total"].sort_values("timestamp")["value"].to_numpy()
    rng = np.random.default_rng(7)
    ext = np.concatenate([total, total[-1] + 8.0 + rng.normal(0, 0.5, 40)])
    write_panel_csv(path, np.arange(ext.size), {"total": ext})
    return ext


def test_online_records_and_mitigation_ablation(workspace, tmp_path):
    stream = str(tmp_path / "stream.csv")
    _jump_stream(workspace, stream)
    out_on = str(tmp_path / "on")
    out_off = str(tmp_path / "off")
    args = ["online", "--checkpoint", workspace["checkpoint"], "--stream", stream]
    assert main(args + ["--out", out_on]) == 0
    assert main(args + ["--no-mitigation", "--out", out_off]) == 0

    rec_on = pd.read_csv(os.path.join(out_on, "online_records.csv"))
    rec_off = pd.read_csv(os.path.join(out_off, "online_records.csv"))
    assert list(rec_on.columns) == ["t", "y", "yhat", "residual", "map_runlength", "detected", "w_0", "w_1", "w_2"]
    assert len(rec_on) == len(rec_off) > 0
    weights = rec_on[["w_0", "w_1", "w_2"]].to_numpy()
    assert np.allclose(weights.sum(axis=1), 1.0, atol=1e-9)

    hits = rec_on.index[rec_on["detected"] == 1]
    assert len(hits) >= 1
    # mitigation snaps the very next prediction's weights back to uniform
    nxt = hits[0] + 1
    assert nxt < len(rec_on)
    assert np.allclose(rec_on.loc[nxt, ["w_0", "w_1", "w_2"]].to_numpy(), 1.0 / 3.0, atol=1e-9)
    assert not np.allclose(rec_off.loc[nxt, ["w_0", "w_1", "w_2"]].to_numpy(), 1.0 / 3.0, atol=1e-2)

    quants = pd.read_csv(os.path.join(out_on, "online_quantiles.csv"))
    assert set(quants.columns) == {"t", "tau", "value"}
    assert len(quants) == 5 * len(rec_on)


def test_online_empty_stream_exits_clean(workspace, tmp_path):
    stream = str(tmp_path / "empty.csv")
    with open(stream, "w") as fh:
        fh.write("series_id,timestamp,value\n")
    out = str(tmp_path / "on")
    assert main(["online", "--checkpoint", workspace["checkpoint"], "--stream", stream, "--out", out]) == 0
    rec = pd.read_csv(os.path.join(out, "online_records.csv"))
    assert len(rec) == 0
    assert list(rec.columns)[:6] == ["t", "y", "yhat", "residual", "map_runlength", "detected"]


def _write_base(path, hierarchy_values, steps=3):
    values = {k: np.asarray(v, dtype=float) for k, v in hierarchy_values.items()}
    write_panel_csv(path, np.arange(steps), values)


def test_reconcile_ols_restores_coherence(workspace, tmp_path):
    base = str(tmp_path / "base.csv")
    _write_base(base, {"total": [10.0, 10, 10], "a": [4.0, 4, 4], "b": [7.0, 7, 7]})
    out = str(tmp_path / "rec")
    assert main(["reconcile", "--hierarchy", workspace["hierarchy"], "--base", base, "--method", "ols", "--out", out]) == 0
    rec = pd.read_csv(os.path.join(out, "reconciled.csv"))
    wide = rec.pivot(index="timestamp", columns="series_id", values="value")
    assert np.allclose(wide["total"], wide["a"] + wide["b"], atol=1e-8)
    assert np.allclose(wide["total"], 31.0 / 3.0, atol=1e-9)


def test_reconcile_bu_and_mint_and_erm(workspace, tmp_path):
    base = str(tmp_path / "base.csv")
    _write_base(base, {"total": [10.0, 10, 10], "a": [4.0, 4, 4], "b": [7.0, 7, 7]})
    hier = workspace["hierarchy"]

    out = str(tmp_path / "bu")
    assert main(["reconcile", "--hierarchy", hier, "--base", base, "--method", "bu", "--out", out]) == 0
    rec = pd.read_csv(os.path.join(out, "reconciled.csv")).pivot(index="timestamp", columns="series_id", values="value")
    assert np.allclose(rec["a"], 4.0) and np.allclose(rec["b"], 7.0) and np.allclose(rec["total"], 11.0)

    rng = np.random.default_rng(0)
    errs = str(tmp_path / "errors.csv")
    _write_base(errs, {k: rng.normal(0, 1, 12) for k in ("total", "a", "b")}, steps=12)
    out = str(tmp_path / "mint")
    assert main(
        ["reconcile", "--hierarchy", hier, "--base", base, "--method", "mint_shr", "--errors", errs, "--out", out]
    ) == 0
    rec = pd.read_csv(os.path.join(out, "reconciled.csv")).pivot(index="timestamp", columns="series_id", values="value")
    assert np.allclose(rec["total"], rec["a"] + rec["b"], atol=1e-8)

    leaves = rng.normal(5, 2, size=(2, 15))
    truth = {"total": leaves.sum(axis=0), "a": leaves[0], "b": leaves[1]}
    fit_truth = str(tmp_path / "fit_truth.csv")
    fit_base = str(tmp_path / "fit_base.csv")
    _write_base(fit_truth, truth, steps=15)
    _write_base(fit_base, {k: v + rng.normal(0, 0.1, 15) for k, v in truth.items()}, steps=15)
    out = str(tmp_path / "erm")
    assert main(
        [
            "reconcile", "--hierarchy", hier, "--base", base, "--method", "erm",
            "--fit-base", fit_base, "--fit-truth", fit_truth, "--out", out,
        ]
    ) == 0
    assert os.path.isfile(os.path.join(out, "reconciled.csv"))


def test_exit_codes(workspace, tmp_path):
    cfg = str(tmp_path / "bad.yaml")
    with open(cfg, "w") as fh:
        fh.write("simulate:\n  kind: cubist\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "x")]) == 2

    code = main(
        ["train", "--config", workspace["config"], "--hierarchy", workspace["hierarchy"], "--panel", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "x")]
    )
    assert code == 3

    base = str(tmp_path / "base.csv")
    _write_base(base, {"total": [10.0], "a": [4.0], "b": [7.0]}, steps=1)
    code = main(["reconcile", "--hierarchy", workspace["hierarchy"], "--base", base, "--method", "mint_shr", "--out", str(tmp_path / "x")])
    assert code == 2  # --errors missing

    assert main(["simulate", "--config", str(tmp_path / "ghost.yaml"), "--out", str(tmp_path / "x")]) == 2

    errs = str(tmp_path / "tiny_errors.csv")
    _write_base(errs, {"total": [1.0, -1], "a": [0.5, -0.5], "b": [0.5, -0.5]}, steps=2)
    code = main(["reconcile", "--hierarchy", workspace["hierarchy"], "--base", base, "--method", "mint_sam", "--errors", errs, "--out", str(tmp_path / "x")])
    assert code == 3  # sample covariance needs more rows than vertices


def test_online_bad_vertex_is_config_error(workspace, tmp_path):
    stream = str(tmp_path / "stream.csv")
    _jump_stream(workspace, stream)
    code = main(
        ["online", "--checkpoint", workspace["checkpoint"], "--stream", stream, "--vertex", "zz", "--out", str(tmp_path / "x")]
    )
    assert code == 2
