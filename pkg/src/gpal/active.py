"""Sequential sample selection from a fixed candidate pool.

Two information-driven selectors (weighted predictive variance and weighted
D-optimality of the hyperparameter information) plus four baselines: random
pool sampling, maximin distance, expected improvement and a static design
regenerated at every sample size.
"""
from __future__ import annotations

import csv
import enum
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from . import fisher, gp
from .core import Dataset, ModelSpec
from .design import LhdConfig, maximin_lhd, to_unit
from .errors import EmptyPool, GpalError
from .evaluation import EvalPool, cv_mse, per_output_mad
from .oracle import OracleSpec, oracle_observe, oracle_truth

log = logging.getLogger(__name__)


class Strategy(str, enum.Enum):
    VWAL = "VWAL"
    DOWAL = "DOWAL"
    RANDOM = "Random"
    MAXIMIN = "MaximinDistance"
    EI = "ExpectedImprovement"
    STATIC = "StaticDOE"


ALL_STRATEGIES = tuple(Strategy)


def _check_pool(pool) -> np.ndarray:
    P = np.atleast_2d(np.asarray(pool, dtype=float))
    if P.shape[0] == 0 or P.size == 0:
        raise EmptyPool("candidate pool is empty")
    return P


def _weights(m: gp.FittedModel, W) -> np.ndarray:
    return m.spec.weights if W is None else np.asarray(W, dtype=float)


# --------------------------------------------------------------------------
# selectors; each returns a row index into ``pool``, lowest index on ties


def vwal_scores(m: gp.FittedModel, pool, W=None) -> np.ndarray:
    return gp.predict_variance(m, _check_pool(pool)) @ _weights(m, W)


def select_vwal(m: gp.FittedModel, pool, W=None) -> int:
    """Pool point with the largest weighted sum of predictive variances."""
    return int(np.argmax(vwal_scores(m, pool, W)))


def dowal_scores(m: gp.FittedModel, pool, W=None) -> np.ndarray:
    P = _check_pool(pool)
    W = _weights(m, W)
    scores = np.zeros(P.shape[0])
    for j in range(m.spec.p):
        if W[j] > 0:
            scores += W[j] * fisher.d_optimality_scores(fisher.augmented_information(m, j, P))
    return scores


def select_dowal(m: gp.FittedModel, pool, W=None) -> int:
    """Pool point minimizing the weighted determinant of the inverse information."""
    return int(np.argmin(dowal_scores(m, pool, W)))


def select_random(pool, rng: np.random.Generator) -> int:
    n = len(pool)
    if n == 0:
        raise EmptyPool("candidate pool is empty")
    return int(rng.integers(n))


def maximin_scores(current, pool, bounds=None) -> np.ndarray:
    P = _check_pool(pool)
    Xc = np.atleast_2d(np.asarray(current, dtype=float))
    if bounds is not None:
        P, Xc = to_unit(P, bounds), to_unit(Xc, bounds)
    d2 = np.sum((P[:, None, :] - Xc[None, :, :]) ** 2, axis=2)
    return np.sqrt(d2.min(axis=1))


def select_maximin_distance(current, pool, bounds=None) -> int:
    """Pool point farthest (in unit-scaled coordinates) from its nearest design point."""
    return int(np.argmax(maximin_scores(current, pool, bounds)))


def expected_improvement(mu, s, y_min) -> np.ndarray:
    """Closed-form EI for minimization; ``max(y_min - mu, 0)`` where ``s == 0``."""
    mu = np.asarray(mu, dtype=float)
    s = np.asarray(s, dtype=float)
    imp = y_min - mu
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(s > 0, imp / np.where(s > 0, s, 1.0), 0.0)
        ei = imp * ndtr(u) + s * np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)
    return np.where(s > 0, ei, np.maximum(imp, 0.0))


def ei_scores(m: gp.FittedModel, pool, W=None) -> np.ndarray:
    """EI on the weighted response ``sum_j W_j Y_j``, minimized.

    The incumbent is the smallest weighted sample mean over observed points;
    outputs are independent, so the weighted variance is ``sum_j W_j^2 Var_j``.
    """
    P = _check_pool(pool)
    W = _weights(m, W)
    mu = gp.predict(m, P) @ W
    s = np.sqrt(gp.predict_variance(m, P) @ (W * W))
    y_min = float(np.min(m.dataset.sample_means @ W))
    return expected_improvement(mu, s, y_min)


def select_ei(m: gp.FittedModel, pool, W=None) -> int:
    return int(np.argmax(ei_scores(m, pool, W)))


# --------------------------------------------------------------------------
# stopping


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    reason: str  # "threshold" | "budget" | "none"
    streak: int


def error_streak(values, threshold: float) -> int:
    """Number of trailing values strictly below ``threshold``."""
    n = 0
    for v in reversed(list(values)):
        if v is not None and np.isfinite(v) and v < threshold:
            n += 1
        else:
            break
    return n


def check_stop(curve, threshold: float, patience: int, i: int, n_iter: int) -> StopDecision:
    """Stop once ``patience`` consecutive mean-MAD values fall below ``threshold``,
    or when the iteration budget is spent.

    ``curve`` is a :class:`LearningCurve` or a plain sequence of mean-MAD values.
    """
    values = [r.mean_mad for r in curve.rows] if isinstance(curve, LearningCurve) else list(curve)
    if not values:
        raise ValueError("stop check needs at least one evaluated iteration")
    streak = error_streak(values, threshold)
    if streak >= patience:
        return StopDecision(True, "threshold", streak)
    if i >= n_iter:
        return StopDecision(True, "budget", streak)
    return StopDecision(False, "none", streak)


# --------------------------------------------------------------------------
# learning curves

CURVE_COLUMNS = (
    "iteration", "n_samples", "strategy", "selected_point_id", "mean_mad",
    "max_mad", "cv_mse", "fit_loglik", "wall_ms", "stop_reason",
)


@dataclass
class CurveRow:
    iteration: int
    n_samples: int
    strategy: str
    selected_point_id: int | None
    mean_mad: float
    max_mad: float
    cv_mse: float
    fit_loglik: float
    wall_ms: float | None = None
    stop_reason: str = ""
    streak: int = 0


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


@dataclass
class LearningCurve:
    strategy: str
    rows: list = field(default_factory=list)
    stop_reason: str = "none"
    error: str | None = None

    def write_csv(self, path, include_timing: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CURVE_COLUMNS)
            for r in self.rows:
                w.writerow([
                    r.iteration, r.n_samples, r.strategy, _fmt(r.selected_point_id),
                    _fmt(r.mean_mad), _fmt(r.max_mad), _fmt(r.cv_mse), _fmt(r.fit_loglik),
                    _fmt(r.wall_ms) if include_timing else "", r.stop_reason,
                ])

    @classmethod
    def read_csv(cls, path) -> "LearningCurve":
        num = lambda s: float(s) if s != "" else float("nan")
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or set(rows[0]) != set(CURVE_COLUMNS):
            raise ValueError(f"{path}: not a learning-curve CSV")
        out = cls(strategy=rows[0]["strategy"])
        for r in rows:
            out.rows.append(CurveRow(
                iteration=int(r["iteration"]), n_samples=int(r["n_samples"]),
                strategy=r["strategy"],
                selected_point_id=int(r["selected_point_id"]) if r["selected_point_id"] else None,
                mean_mad=num(r["mean_mad"]), max_mad=num(r["max_mad"]), cv_mse=num(r["cv_mse"]),
                fit_loglik=num(r["fit_loglik"]),
                wall_ms=num(r["wall_ms"]) if r["wall_ms"] else None,
                stop_reason=r["stop_reason"],
            ))
        out.stop_reason = out.rows[-1].stop_reason or "none"
        return out


# --------------------------------------------------------------------------
# the loop


@dataclass(frozen=True, eq=False)
class Pools:
    initial: np.ndarray
    candidates: np.ndarray
    evaluation: EvalPool


@dataclass(frozen=True)
class LoopConfig:
    spec: ModelSpec
    n_iter: int = 30
    threshold: float = 0.007
    patience: int = 3
    fit: gp.FitConfig = gp.FitConfig()
    cv_fit: gp.FitConfig = gp.FitConfig(restarts=1, ftol=1e-6)
    cv_refit: bool = True
    initial_obs_seed: int = 0
    obs_seed: int = 1
    strategy_seed: int = 2
    static_seed: int = 3
    lhd_sweeps: int = 2000


@dataclass
class LoopResult:
    curve: LearningCurve
    model: gp.FittedModel | None
    dataset: Dataset | None
    events: list = field(default_factory=list)


def _evaluate(cfg: LoopConfig, model, d: Dataset, oracle: OracleSpec, pools: Pools):
    mads = per_output_mad(model, pools.evaluation)
    cv = float("nan")
    if d.k >= cfg.spec.q + 2:
        res = cv_mse(
            d, cfg.spec, oracle_truth(oracle, d.design), cfg.cv_fit,
            refit=cfg.cv_refit, hyperparameters=[o.hp for o in model.outputs],
        )
        cv = res.value
    return float(np.mean(mads)), float(np.max(mads)), cv


def run_loop(cfg: LoopConfig, strategy, oracle: OracleSpec, pools: Pools) -> LoopResult:
    """Fit, score, select, observe and augment until a stop condition fires.

    Row ``i`` of the returned curve describes the model fitted after ``i``
    acquisitions; its ``selected_point_id`` is the candidate-pool index
    acquired at that step.  A component failure ends the run early with the
    rows collected so far and ``curve.error`` set.
    """
    strategy = Strategy(strategy)
    spec = cfg.spec
    curve = LearningCurve(strategy=strategy.value)
    events: list = []
    init_rng = np.random.default_rng(cfg.initial_obs_seed)
    obs_rng = np.random.default_rng(cfg.obs_seed)
    pick_rng = np.random.default_rng(cfg.strategy_seed)
    bounds = spec.bounds

    d = Dataset.from_responses(
        pools.initial, list(oracle_observe(oracle, pools.initial, init_rng, events)), bounds
    )
    available = list(range(pools.candidates.shape[0]))
    selected: int | None = None
    model = None
    i = 0
    while True:
        t0 = time.perf_counter()
        try:
            if strategy is Strategy.STATIC and i > 0:
                n = pools.initial.shape[0] + i
                X = maximin_lhd(LhdConfig(n, spec.q, bounds, seed=cfg.static_seed + n, sweeps=cfg.lhd_sweeps))
                d = Dataset.from_responses(X, list(oracle_observe(oracle, X, obs_rng, events)), bounds)
            model = gp.fit(spec, d, cfg.fit)
            mean_m, max_m, cv = _evaluate(cfg, model, d, oracle, pools)
        except (GpalError, ArithmeticError, np.linalg.LinAlgError) as exc:
            log.error("%s: iteration %d failed: %s", strategy.value, i, exc)
            curve.error = f"iteration {i}: {type(exc).__name__}: {exc}"
            curve.stop_reason = "error"
            if curve.rows:
                curve.rows[-1].stop_reason = "error"
            return LoopResult(curve, model, d, events)
        row = CurveRow(
            iteration=i, n_samples=d.k, strategy=strategy.value, selected_point_id=selected,
            mean_mad=mean_m, max_mad=max_m, cv_mse=cv, fit_loglik=model.loglik,
        )
        curve.rows.append(row)
        decision = check_stop(curve, cfg.threshold, cfg.patience, i, cfg.n_iter)
        row.streak = decision.streak
        if not decision.stop and strategy is not Strategy.STATIC and not available:
            decision = StopDecision(True, "budget", decision.streak)
        if decision.stop:
            row.stop_reason = curve.stop_reason = decision.reason
            row.wall_ms = 1e3 * (time.perf_counter() - t0)
            return LoopResult(curve, model, d, events)

        if strategy is not Strategy.STATIC:
            try:
                pool = pools.candidates[available]
                if strategy is Strategy.VWAL:
                    idx = select_vwal(model, pool)
                elif strategy is Strategy.DOWAL:
                    idx = select_dowal(model, pool)
                elif strategy is Strategy.RANDOM:
                    idx = select_random(pool, pick_rng)
                elif strategy is Strategy.MAXIMIN:
                    idx = select_maximin_distance(d.design, pool, bounds)
                else:
                    idx = select_ei(model, pool)
                selected = available.pop(idx)
                f = pools.candidates[selected]
                d = d.append(f, oracle_observe(oracle, f, obs_rng, events))
            except (GpalError, ArithmeticError, np.linalg.LinAlgError) as exc:
                log.error("%s: selection at iteration %d failed: %s", strategy.value, i, exc)
                curve.error = f"selection {i}: {type(exc).__name__}: {exc}"
                row.stop_reason = curve.stop_reason = "error"
                return LoopResult(curve, model, d, events)
        row.wall_ms = 1e3 * (time.perf_counter() - t0)
        i += 1


__all__ = [
    "ALL_STRATEGIES",
    "CURVE_COLUMNS",
    "CurveRow",
    "LearningCurve",
    "LoopConfig",
    "LoopResult",
    "Pools",
    "StopDecision",
    "Strategy",
    "check_stop",
    "dowal_scores",
    "ei_scores",
    "error_streak",
    "expected_improvement",
    "maximin_scores",
    "run_loop",
    "select_dowal",
    "select_ei",
    "select_maximin_distance",
    "select_random",
    "select_vwal",
    "vwal_scores",
]
