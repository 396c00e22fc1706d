"""Hierarchical forecasting with gated expert mixtures.

The package trains one small mixture-of-experts forecaster per hierarchy
vertex (bottom level first, parents regularized toward their signed child
sums), wraps point forecasts with monotone quantile curves built from
Chebyshev-integrated positive integrands, reconciles base forecasts with
linear plans, and mitigates online regime changes with a Bayesian run-length
detector plus weight shrinkage.
"""

from .changepoint import (
    OnlineRecord,
    RunLengthState,
    ShrinkState,
    bocpd_init,
    bocpd_step,
    online_loop,
    posterior_update,
    shrink_weights,
    upm_predictive,
)
from .config import (
    ChangepointConfig,
    ExpertsConfig,
    GateConfig,
    OnlineConfig,
    QuantileConfig,
    RunConfig,
    SimulateConfig,
)
from .dataio import (
    SeriesPanel,
    load_hierarchy_spec,
    load_panel_csv,
    load_series_csv,
    simulate_hierarchical_panel,
    simulate_piecewise,
    sliding_windows,
    split_points,
    write_hierarchy_spec,
    write_panel_csv,
)
from .errors import (
    ConfigError,
    DataError,
    HiercastError,
    HierarchyError,
    NotFittedError,
    NumericError,
)
from .experts import (
    AutoRegressor,
    ExpSmoother,
    Expert,
    MovingAverage,
    SeasonalNaive,
    WindowNet,
    make_expert,
)
from .gating import (
    GatingNetwork,
    MixtureForecaster,
    TrainingHistory,
    build_roster,
    combine_forecasts,
    forecast_mixture,
    recon_loss,
    train_gate,
    train_hierarchy_bottom_up,
)
from .hierarchy import (
    Hierarchy,
    SummingMatrix,
    aggregate,
    build_hierarchy,
    coherency_feasible,
    coherent_loss,
    summing_matrix,
)
from .metrics import EvalReport, build_eval_report, crps_from_quantiles, mase, nrmse
from .neural import DenseNet, ZScore
from .pipeline import (
    TrainedModel,
    forecast_model,
    load_checkpoint,
    save_checkpoint,
    train_pipeline,
)
from .quantile import (
    QuantileGenerator,
    chebyshev_roots,
    curve_coefficients,
    dct_coefficients,
    eval_quantile,
    integrate_coefficients,
    pinball_loss,
    train_quantile,
)
from .reconcile import (
    METHODS,
    ReconciliationPlan,
    bu_plan,
    erm_plan,
    mint_plan,
    ols_plan,
    reconcile,
)

__all__ = [
    "AutoRegressor",
    "ChangepointConfig",
    "ConfigError",
    "DataError",
    "DenseNet",
    "EvalReport",
    "ExpSmoother",
    "Expert",
    "ExpertsConfig",
    "GateConfig",
    "GatingNetwork",
    "HierarchyError",
    "Hierarchy",
    "HiercastError",
    "METHODS",
    "MixtureForecaster",
    "MovingAverage",
    "NotFittedError",
    "NumericError",
    "OnlineConfig",
    "OnlineRecord",
    "QuantileConfig",
    "QuantileGenerator",
    "ReconciliationPlan",
    "RunConfig",
    "RunLengthState",
    "SeasonalNaive",
    "SeriesPanel",
    "ShrinkState",
    "SimulateConfig",
    "SummingMatrix",
    "TrainedModel",
    "TrainingHistory",
    "WindowNet",
    "ZScore",
    "aggregate",
    "bocpd_init",
    "bocpd_step",
    "bu_plan",
    "build_eval_report",
    "build_hierarchy",
    "build_roster",
    "chebyshev_roots",
    "coherency_feasible",
    "coherent_loss",
    "combine_forecasts",
    "crps_from_quantiles",
    "curve_coefficients",
    "dct_coefficients",
    "erm_plan",
    "eval_quantile",
    "forecast_mixture",
    "forecast_model",
    "integrate_coefficients",
    "load_checkpoint",
    "load_hierarchy_spec",
    "load_panel_csv",
    "load_series_csv",
    "make_expert",
    "mase",
    "mint_plan",
    "nrmse",
    "ols_plan",
    "online_loop",
    "pinball_loss",
    "posterior_update",
    "recon_loss",
    "reconcile",
    "save_checkpoint",
    "shrink_weights",
    "simulate_hierarchical_panel",
    "simulate_piecewise",
    "sliding_windows",
    "split_points",
    "summing_matrix",
    "train_gate",
    "train_hierarchy_bottom_up",
    "train_pipeline",
    "train_quantile",
    "upm_predictive",
    "write_hierarchy_spec",
    "write_panel_csv",
]

__version__ = "0.1.0"
