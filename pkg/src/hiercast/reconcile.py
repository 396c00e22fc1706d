"""Reconciliation baselines: map base forecasts to coherent ones via y~ = S P y^."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .hierarchy import SummingMatrix

METHODS = ("bu", "ols", "mint_sam", "mint_shr", "mint_ols", "erm")
_RIDGE = 1e-8


@dataclass(frozen=True)
class ReconciliationPlan:
    """Immutable S and P pair; reconciled forecasts are S @ P @ base."""

    method: str
    S: SummingMatrix
    P: np.ndarray
    W: np.ndarray | None = None
    alpha: float | None = None
    notes: tuple[str, ...] = field(default_factory=tuple)

    @property
    def projection(self) -> np.ndarray:
        """The n x n map taking base forecasts to reconciled ones."""
        return self.S.entries @ self.P


def bu_plan(S: SummingMatrix) -> ReconciliationPlan:
    """Keep the bottom-row forecasts and re-derive every aggregate from them."""
    P = np.zeros((S.m, S.n))
    P[:, S.n - S.m :] = np.eye(S.m)
    return ReconciliationPlan(method="bu", S=S, P=P)


def ols_plan(S: SummingMatrix) -> ReconciliationPlan:
    """Orthogonal projection onto the coherent subspace: P = (S'S)^-1 S'."""
    s = S.entries
    gram = s.T @ s
    if np.linalg.cond(gram) > 1e12:
        raise NumericError("S'S is singular; summing matrix is degenerate")
    P = np.linalg.solve(gram, s.T)
    return ReconciliationPlan(method="ols", S=S, P=P)


def _shrinkage_alpha(errors: np.ndarray) -> float:
    """Data-driven intensity: var of off-diagonal sample covariances over
    their squared magnitudes, clipped into (0, 1]."""
    t = errors.shape[0]
    centered = errors - errors.mean(axis=0)
    w = centered.T @ centered / t
    # per-entry variance of the covariance estimates
    prods = centered[:, :, None] * centered[:, None, :]
    var_w = prods.var(axis=0) / t
    off = ~np.eye(w.shape[0], dtype=bool)
    denom = float(np.sum(w[off] ** 2))
    if denom <= 0.0:
        return 1.0
    return float(np.clip(np.sum(var_w[off]) / denom, 1e-6, 1.0))


def mint_plan(S: SummingMatrix, errors, kind: str = "shr", alpha: float | str = 0.1) -> ReconciliationPlan:
    """Trace-minimizing combination P = (S'W^-1 S)^-1 S'W^-1.

    ``errors`` holds one base-forecast error vector per row (T x n).  kind
    selects the W estimate: ``sam`` uses the raw sample covariance (needs at
    least n+1 rows), ``shr`` shrinks it toward its diagonal with intensity
    alpha (pass "auto" for a data-driven intensity), ``ols`` uses the
    identity and reproduces ols_plan.
    """
    if kind not in ("sam", "shr", "ols"):
        raise ConfigError(f"unknown mint kind {kind!r}; choose sam, shr, or ols")
    notes: list[str] = []
    used_alpha: float | None = None
    if kind == "ols":
        W = np.eye(S.n)
    else:
        e = np.atleast_2d(np.asarray(errors, dtype=float))
        if e.shape[1] != S.n:
            raise DataError(f"error rows must have {S.n} columns, got {e.shape[1]}")
        t = e.shape[0]
        W_sam = e.T @ e / t
        if kind == "sam":
            if t < S.n + 1:
                raise DataError(
                    f"sample covariance needs at least {S.n + 1} error rows, got {t}; "
                    "use kind='shr' instead"
                )
            W = W_sam
        else:
            if alpha == "auto":
                used_alpha = _shrinkage_alpha(e)
                notes.append(f"auto shrinkage alpha={used_alpha:.4f}")
            else:
                used_alpha = float(alpha)
                if not 0.0 < used_alpha <= 1.0:
                    raise ConfigError(f"shrinkage alpha must be in (0, 1], got {alpha}")
            W = (1.0 - used_alpha) * W_sam + used_alpha * np.diag(np.diag(W_sam))
    W = (W + W.T) / 2.0
    eigs = np.linalg.eigvalsh(W)
    if eigs.min() < -1e-10:
        raise NumericError("estimated W is not positive semidefinite")
    if eigs.min() < 1e-12 or np.linalg.cond(W) > 1e12:
        raise NumericError(
            "estimated W is singular or ill-conditioned; use kind='shr' with larger alpha"
        )
    s = S.entries
    winv_s = np.linalg.solve(W, s)
    P = np.linalg.solve(s.T @ winv_s, winv_s.T)
    return ReconciliationPlan(
        method=f"mint_{kind}", S=S, P=P, W=W, alpha=used_alpha, notes=tuple(notes)
    )


def erm_plan(S: SummingMatrix, base_forecasts, truths) -> ReconciliationPlan:
    """Directly minimize the empirical squared error of S P y^ over P.

    Normal equations with a 1e-8 ridge on the forecast Gram matrix; the
    SPS = S constraint is deliberately dropped.
    """
    yhat = np.atleast_2d(np.asarray(base_forecasts, dtype=float))
    y = np.atleast_2d(np.asarray(truths, dtype=float))
    if yhat.shape != y.shape or yhat.shape[1] != S.n:
        raise DataError("base forecasts and truths must both be T x n")
    s = S.entries
    gram_s = s.T @ s
    gram_f = yhat.T @ yhat + _RIDGE * np.eye(S.n)
    cross = y.T @ yhat
    notes: list[str] = []
    if np.linalg.cond(yhat.T @ yhat) > 1e12:
        notes.append("forecast Gram matrix near-singular; ridge dominates")
    # cross @ inv(gram_f), computed as a solve on the symmetric Gram
    right = np.linalg.solve(gram_f, cross.T).T
    P = np.linalg.solve(gram_s, s.T @ right)
    return ReconciliationPlan(method="erm", S=S, P=P, notes=tuple(notes))


def reconcile(plan: ReconciliationPlan, base_forecasts) -> np.ndarray:
    """Apply y~ = S P y^ to a length-n vector or an n x H block."""
    yhat = np.asarray(base_forecasts, dtype=float)
    if yhat.ndim not in (1, 2) or yhat.shape[0] != plan.S.n:
        raise DataError(f"base forecasts must have leading dimension {plan.S.n}")
    return plan.projection @ yhat
