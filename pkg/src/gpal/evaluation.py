"""Accuracy scores against oracle truth: mean/max MAD and leave-one-out MSE."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import gp
from .core import Dataset, ModelSpec
from .errors import DimensionMismatch, FoldFitFailed, GpalError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EvalPool:
    points: np.ndarray  # (N_eva, q)
    truth: np.ndarray  # (N_eva, p)

    def __post_init__(self):
        P = np.asarray(self.points, dtype=float)
        T = np.asarray(self.truth, dtype=float)
        if T.ndim == 1:
            T = T[:, None]
        if P.ndim != 2 or T.shape[0] != P.shape[0]:
            raise DimensionMismatch("one truth row per evaluation point required")
        if P.shape[0] < 2:
            raise ValueError("evaluation pool needs at least 2 points")
        object.__setattr__(self, "points", P)
        object.__setattr__(self, "truth", T)


def per_output_mad(m: gp.FittedModel, ep: EvalPool) -> np.ndarray:
    """Mean absolute deviation of each output over the pool."""
    if ep.points.shape[1] != m.spec.q or ep.truth.shape[1] != m.spec.p:
        raise DimensionMismatch("evaluation pool and model dimensions differ")
    return np.mean(np.abs(gp.predict(m, ep.points) - ep.truth), axis=0)


def mean_mad(m: gp.FittedModel, ep: EvalPool) -> float:
    return float(np.mean(per_output_mad(m, ep)))


def max_mad(m: gp.FittedModel, ep: EvalPool) -> float:
    return float(np.max(per_output_mad(m, ep)))


@dataclass
class CvResult:
    value: float
    n_folds: int
    failed_folds: list = field(default_factory=list)
    fold_errors: np.ndarray | None = None


def mean_fold_error(fold_errors) -> float:
    """Average of per-fold squared errors, skipping failed (NaN) folds."""
    e = np.asarray(fold_errors, dtype=float)
    ok = e[np.isfinite(e)]
    return float(np.mean(ok)) if ok.size else float("nan")


def cv_mse(
    d: Dataset,
    spec: ModelSpec,
    truth,
    fit_config: gp.FitConfig | None = None,
    *,
    refit: bool = True,
    hyperparameters=None,
) -> CvResult:
    """Leave-one-out MSE against the oracle truth at each training point.

    Fold ``i`` drops point ``i``, re-estimates hyperparameters on the rest
    (or, with ``refit=False``, conditions on the rest at the fixed
    ``hyperparameters``), predicts at the held-out force and compares with
    ``truth[i]``.  Errors are averaged over outputs, then over folds.  A fold
    whose fit fails is reported and left out of the average.

    ``hyperparameters`` (one per output) also serve as optimizer warm starts
    when ``refit`` is true.
    """
    truth = np.asarray(truth, dtype=float)
    if truth.ndim == 1:
        truth = truth[:, None]
    if truth.shape != (d.k, d.p):
        raise DimensionMismatch(f"truth shape {truth.shape}, expected ({d.k}, {d.p})")
    if d.k < spec.q + 2:
        raise ValueError(f"leave-one-out needs at least q + 2 = {spec.q + 2} samples, have {d.k}")
    if not refit and hyperparameters is None:
        raise ValueError("refit=False requires fixed hyperparameters")
    cfg = fit_config or gp.FitConfig(restarts=2)

    errors = np.full(d.k, np.nan)
    failed = []
    for i in range(d.k):
        try:
            fold = d.drop(i)
            if refit:
                model = gp.fit(spec, fold, cfg, warm_start=hyperparameters)
            else:
                model = gp.FittedModel.from_hyperparameters(spec, fold, hyperparameters)
            pred = gp.predict(model, d.design[i])
        except (GpalError, ArithmeticError, np.linalg.LinAlgError) as exc:
            err = FoldFitFailed(i, exc)
            warnings.warn(str(err), RuntimeWarning, stacklevel=2)
            failed.append(i)
            continue
        errors[i] = np.mean((pred - truth[i]) ** 2)
    return CvResult(value=mean_fold_error(errors), n_folds=d.k, failed_folds=failed, fold_errors=errors)


__all__ = [
    "CvResult",
    "EvalPool",
    "cv_mse",
    "max_mad",
    "mean_fold_error",
    "mean_mad",
    "per_output_mad",
]
