"""Per-output maximum-likelihood fitting and BLUP prediction.

Each output ``j`` is fitted independently.  The linear coefficients ``S_j``
are profiled out by generalized least squares at every hyperparameter value,
so the optimizer only sees ``(tau2, theta, sigma2[, phi2])``, in log space.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg, optimize
from scipy.linalg import lapack

from . import kernel
from .core import Dataset, Hyperparameters, ModelSpec, Variant, as_design, validate_dataset
from .design import latin_hypercube
from .errors import (
    DimensionMismatch,
    NotPositiveDefinite,
    OptimizationFailed,
    RankDeficientDesign,
)

log = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))
SURROGATE_SWEEPS = 5
SURROGATE_TOL = 1e-8


def _output_column(d: Dataset, j: int) -> np.ndarray:
    if not 0 <= j < d.p:
        raise DimensionMismatch(f"output index {j} outside 0..{d.p - 1}")
    return np.asarray(d.sample_means[:, j], dtype=float)


def gls_solve(F: np.ndarray, bundle: kernel.CovarianceBundle, y: np.ndarray) -> np.ndarray:
    """``(F^T R^-1 F)^-1 F^T R^-1 y`` for a factored ``R``."""
    LF = linalg.solve_triangular(bundle.chol, F, lower=True, check_finite=False)
    Ly = linalg.solve_triangular(bundle.chol, y, lower=True, check_finite=False)
    return _whitened_gls(LF, Ly)


def _whitened_gls(LF: np.ndarray, Ly: np.ndarray) -> np.ndarray:
    A = LF.T @ LF
    cA, info = lapack.dpotrf(A, lower=1, clean=1)
    if info != 0:
        raise RankDeficientDesign("F^T R^-1 F is singular")
    dg = np.diag(cA)
    if dg.min() <= 1e-7 * dg.max():  # condition number above ~1e14
        raise RankDeficientDesign("F^T R^-1 F is numerically singular")
    sol, _ = lapack.dpotrs(cA, LF.T @ Ly, lower=1)
    return sol


def _profile_coefficients(spec, hp, g, y, S_start=None):
    """GLS coefficients and the covariance they were computed under.

    For the surrogate variant ``R`` depends on ``S`` through the propagated
    actuator noise, so GLS and covariance assembly alternate from an OLS
    start until ``S`` moves by less than ``1e-8`` (at most 5 sweeps).
    """
    if spec.variant is Variant.KRIGING or not np.any(spec.sigma_F):
        bundle = kernel.factorize(kernel.covariance_from_geometry(spec, hp, None, g))
        return gls_solve(g.X, bundle, y), bundle
    if S_start is None:
        S, *_ = np.linalg.lstsq(g.X, y, rcond=None)
    else:
        S = np.asarray(S_start, dtype=float)
    for _ in range(SURROGATE_SWEEPS):
        bundle = kernel.factorize(kernel.covariance_from_geometry(spec, hp, S, g))
        S_new = gls_solve(g.X, bundle, y)
        done = np.max(np.abs(S_new - S)) <= SURROGATE_TOL * max(1.0, np.max(np.abs(S_new)))
        S = S_new
        if done:
            break
    bundle = kernel.factorize(kernel.covariance_from_geometry(spec, hp, S, g))
    return S, bundle


def gls_coefficients(spec: ModelSpec, hp: Hyperparameters, d: Dataset, j: int = 0) -> np.ndarray:
    """Generalized least-squares estimate of the sensitivity vector for output ``j``."""
    hp.validate(spec)
    g = kernel.geometry(spec, d.design, d.replications)
    S, _ = _profile_coefficients(spec, hp, g, _output_column(d, j))
    return S


def _loglik_from_bundle(bundle: kernel.CovarianceBundle, r: np.ndarray) -> float:
    alpha = bundle.solve(r)
    return float(-0.5 * r.size * LOG_2PI - 0.5 * bundle.logdet - 0.5 * r @ alpha)


def log_likelihood(spec: ModelSpec, hp: Hyperparameters, S, d: Dataset, j: int = 0) -> float:
    """Gaussian log-likelihood of output ``j`` at coefficients ``S``."""
    hp.validate(spec)
    S = np.asarray(S, dtype=float)
    if S.shape != (spec.q,):
        raise DimensionMismatch(f"S must have length {spec.q}")
    bundle = kernel.assemble_covariance(spec, hp, S, d)
    return _loglik_from_bundle(bundle, _output_column(d, j) - d.design @ S)


def log_likelihood_gradient(spec: ModelSpec, hp: Hyperparameters, S, d: Dataset, j: int = 0) -> np.ndarray:
    """Gradient of :func:`log_likelihood` wrt the hyperparameters at fixed ``S``.

    Uses ``dL/da = 0.5 * alpha^T dR_a alpha - 0.5 * tr(R^-1 dR_a)``.
    """
    g = kernel.geometry(spec, d.design, d.replications)
    bundle = kernel.factorize(kernel.covariance_from_geometry(spec, hp, S, g))
    r = _output_column(d, j) - d.design @ np.asarray(S, dtype=float)
    return _loglik_gradient(bundle, r, kernel.derivatives_from_geometry(spec, hp, g))


def _loglik_gradient(bundle, r, dR) -> np.ndarray:
    alpha = bundle.solve(r)
    W = bundle.solve(np.eye(r.size)) - np.outer(alpha, alpha)
    return -0.5 * np.einsum("ij,aji->a", W, dR)


# --------------------------------------------------------------------------
# fitting


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings.

    Bounds are on the raw (not log) parameters; the variance bounds are
    multiples of the sample variance of the output being fitted.
    """

    restarts: int = 8
    seed: int = 0
    method: str = "L-BFGS-B"
    maxiter: int = 200
    ftol: float = 2.2e-9
    gtol: float = 1e-5
    theta_bounds: tuple = (1e-3, 1e3)
    tau2_bounds: tuple = (1e-8, 1e3)
    noise_bounds: tuple = (1e-12, 1.0)


@dataclass(frozen=True, eq=False)
class OutputFit:
    S_hat: np.ndarray
    hp: Hyperparameters
    bundle: kernel.CovarianceBundle
    alpha: np.ndarray
    loglik: float
    diagnostics: dict = field(default_factory=dict)
    linear: "_LinearEffect | None" = None


@dataclass(frozen=True, eq=False)
class _LinearEffect:
    """Prediction pieces for the surrogate's random sensitivity ``S_tilde ~ N(0, phi2 I)``.

    Conditioning on ``R = phi2 F F^T + B`` directly subtracts numbers of size
    ``phi2 |F0|^2`` (huge for raw forces) to get a small variance.  Instead the
    random slope is integrated out as a Bayesian linear effect: ``B`` holds
    only the GP, propagated-input and output noise parts, and the slope
    posterior is the ``q x q`` problem ``(I / phi2 + F^T B^-1 F)^-1``.
    """

    B: kernel.CovarianceBundle
    LF: np.ndarray  # L_B^-1 F
    P_chol: np.ndarray  # Cholesky of I / phi2 + F^T B^-1 F
    slope_mean: np.ndarray  # posterior mean of S_tilde
    beta: np.ndarray  # B^-1 (r - F slope_mean)


def _linear_effect(spec, g, hp: Hyperparameters, S, r) -> _LinearEffect | None:
    if spec.variant is not Variant.SURROGATE or not hp.phi2:
        return None
    if len(g.X) < spec.q:
        # fewer points than inputs: the slope is not identified and plain
        # conditioning on the full covariance is the more accurate route
        return None
    B = kernel.factorize(kernel.covariance_from_geometry(spec, hp.with_phi2(0.0), S, g))
    LF = linalg.solve_triangular(B.chol, g.X, lower=True, check_finite=False)
    Lr = linalg.solve_triangular(B.chol, r, lower=True, check_finite=False)
    Pinv = LF.T @ LF + np.eye(spec.q) / hp.phi2
    P_chol = linalg.cholesky(Pinv, lower=True, check_finite=False)
    slope = linalg.cho_solve((P_chol, True), LF.T @ Lr, check_finite=False)
    beta = B.solve(r - g.X @ slope)
    return _LinearEffect(B=B, LF=LF, P_chol=P_chol, slope_mean=slope, beta=beta)


def _log_bounds(spec: ModelSpec, cfg: FitConfig, y: np.ndarray) -> np.ndarray:
    v = float(np.var(y))
    if not v > 0:
        v = float(np.mean(y * y)) or 1.0
    rows = [(cfg.tau2_bounds[0] * v, cfg.tau2_bounds[1] * v)]
    rows += [cfg.theta_bounds] * spec.m
    rows.append((cfg.noise_bounds[0], cfg.noise_bounds[1] * v))
    if spec.variant is Variant.SURROGATE:
        rows.append((cfg.noise_bounds[0], cfg.noise_bounds[1] * v))
    return np.log(np.asarray(rows, dtype=float))


class _Objective:
    """Negative profile log-likelihood (and gradient) over log hyperparameters.

    Works on raw parameter vectors; this is the inner loop of every fit.
    """

    def __init__(self, spec, g, y):
        self.spec, self.g, self.y = spec, g, y
        self.m = spec.m
        self.surrogate = spec.variant is Variant.SURROGATE
        self.coupled = self.surrogate and bool(np.any(spec.sigma_F))
        self.diag = np.diag_indices(g.k)
        self.S_last = None
        self.calls = 0

    def __call__(self, z):
        self.calls += 1
        try:
            return self._evaluate(z)
        except (NotPositiveDefinite, RankDeficientDesign, linalg.LinAlgError):
            return 1e25, np.zeros_like(z)

    def _evaluate(self, z):
        g, y, m = self.g, self.y, self.m
        v = np.exp(z)
        tau2, theta, sigma2 = v[0], v[1 : m + 1], v[m + 1]
        C = np.exp(-g.D @ theta)
        R0 = tau2 * C
        R0[self.diag] += sigma2 * g.inv_reps
        if self.surrogate:
            R0 += v[m + 2] * g.FFt
        if self.coupled:
            hp = Hyperparameters.from_vector(self.spec, v)
            S, bundle = _profile_coefficients(self.spec, hp, g, y, self.S_last)
            self.S_last = S
            L = bundle.chol
        else:
            L, info = lapack.dpotrf(R0, lower=1, clean=1)
            if info != 0:
                L = kernel.factorize(R0).chol
        Linv, info = lapack.dtrtri(L, lower=1)
        if info != 0:
            raise NotPositiveDefinite("singular Cholesky factor")
        if not self.coupled:
            S = _whitened_gls(Linv @ g.X, Linv @ y)
        logdet = 2.0 * np.log(L[self.diag]).sum()
        e = Linv @ (y - g.X @ S)
        ll = -0.5 * (g.k * LOG_2PI + logdet + e @ e)
        alpha = Linv.T @ e
        W = Linv.T @ Linv
        W -= np.outer(alpha, alpha)
        WC = W * C
        grad = np.empty_like(v)
        grad[0] = -0.5 * WC.sum()
        grad[1 : m + 1] = 0.5 * tau2 * np.einsum("ij,ijd->d", WC, g.D)
        grad[m + 1] = -0.5 * W[self.diag] @ g.inv_reps
        if self.surrogate:
            grad[m + 2] = -0.5 * np.sum(W * g.FFt)
        if not np.isfinite(ll) or not np.all(np.isfinite(grad)):
            return 1e25, np.zeros_like(z)
        return -ll, -grad * v


def _fit_output(spec, g, y, cfg: FitConfig, warm: Sequence[Hyperparameters], seed: int) -> OutputFit:
    bounds = _log_bounds(spec, cfg, y)
    lo, hi = bounds[:, 0], bounds[:, 1]
    starts = [np.clip(np.log(h.to_vector(spec)), lo, hi) for h in warm][: cfg.restarts]
    n_lhd = cfg.restarts - len(starts)
    if n_lhd > 0:
        U = latin_hypercube(n_lhd, len(lo), np.random.default_rng(seed))
        starts += list(lo + U * (hi - lo))

    obj = _Objective(spec, g, y)
    best_z, best_f, n_failed = None, np.inf, 0
    for z0 in starts:
        obj.S_last = None
        f0, _ = obj(z0)
        cand = [(f0, z0)]
        try:
            if cfg.method == "Nelder-Mead":
                res = optimize.minimize(
                    lambda z: obj(np.clip(z, lo, hi))[0], z0, method="Nelder-Mead",
                    options={"maxiter": cfg.maxiter * len(z0), "xatol": 1e-6, "fatol": 1e-9},
                )
                res.x = np.clip(res.x, lo, hi)
            else:
                res = optimize.minimize(
                    obj, z0, jac=True, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                    options={"maxiter": cfg.maxiter, "ftol": cfg.ftol, "gtol": cfg.gtol},
                )
            obj.S_last = None
            cand.append((obj(res.x)[0], res.x))
        except (ValueError, ArithmeticError):
            n_failed += 1
        f, z = min(cand, key=lambda c: c[0])
        if f >= 1e25:
            n_failed += 1
            continue
        if f < best_f:
            best_f, best_z = f, np.asarray(z, dtype=float)
    if best_z is None:
        raise OptimizationFailed("every optimizer restart diverged")

    hp = Hyperparameters.from_vector(spec, np.exp(best_z))
    fit = _condition(spec, g, y, hp)
    fit.diagnostics.update(
        restarts=len(starts), failed_restarts=n_failed, evaluations=obj.calls,
        starts=[np.exp(z).tolist() for z in starts],
        at_lower_bound=[bool(v) for v in np.isclose(best_z, lo)],
        at_upper_bound=[bool(v) for v in np.isclose(best_z, hi)],
    )
    return fit


def _condition(spec, g, y, hp: Hyperparameters, S=None) -> OutputFit:
    if S is None:
        S, bundle = _profile_coefficients(spec, hp, g, y)
    else:
        S = np.asarray(S, dtype=float)
        bundle = kernel.factorize(kernel.covariance_from_geometry(spec, hp, S, g))
    r = y - g.X @ S
    alpha = bundle.solve(r)
    ll = _loglik_from_bundle(bundle, r)
    return OutputFit(
        S_hat=S, hp=hp, bundle=bundle, alpha=alpha, loglik=ll,
        diagnostics={"loglik": ll, "jitter": bundle.jitter},
        linear=_linear_effect(spec, g, hp, S, r),
    )


@dataclass(frozen=True, eq=False)
class FittedModel:
    spec: ModelSpec
    dataset: Dataset
    outputs: tuple

    @property
    def loglik(self) -> float:
        """Sum of per-output maximized log-likelihoods."""
        return float(sum(o.loglik for o in self.outputs))

    @classmethod
    def from_hyperparameters(cls, spec: ModelSpec, d: Dataset, hps, S=None) -> "FittedModel":
        """Condition on ``d`` at fixed hyperparameters (no optimization).

        ``S`` defaults to the GLS estimate per output.
        """
        g = kernel.geometry(spec, d.design, d.replications)
        outs = []
        for j, hp in enumerate(hps):
            hp.validate(spec)
            outs.append(_condition(spec, g, _output_column(d, j), hp, None if S is None else S[j]))
        return cls(spec=spec, dataset=d, outputs=tuple(outs))

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "dataset": self.dataset.to_dict(),
            "outputs": [
                {
                    "S_hat": o.S_hat.tolist(),
                    "hyperparameters": o.hp.to_dict(),
                    "loglik": o.loglik,
                    "diagnostics": o.diagnostics,
                }
                for o in self.outputs
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FittedModel":
        spec = ModelSpec.from_dict(doc["spec"])
        d = Dataset.from_dict(doc["dataset"])
        outs = doc["outputs"]
        return cls.from_hyperparameters(
            spec, d,
            [Hyperparameters.from_dict(o["hyperparameters"]) for o in outs],
            S=[np.asarray(o["S_hat"]) for o in outs],
        )


def fit(spec: ModelSpec, d: Dataset, config: FitConfig | None = None, warm_start=None) -> FittedModel:
    """Maximum-likelihood fit of every output.

    ``warm_start`` optionally gives, per output, hyperparameters used as the
    first optimizer starts (they count toward ``config.restarts``).
    """
    cfg = config or FitConfig()
    validate_dataset(d)
    if d.q != spec.q or d.p != spec.p:
        raise DimensionMismatch(f"dataset is q={d.q}, p={d.p}; spec wants q={spec.q}, p={spec.p}")
    if np.linalg.matrix_rank(d.design) < spec.q:
        raise RankDeficientDesign(f"design of {d.k} points has rank below q={spec.q}")
    g = kernel.geometry(spec, d.design, d.replications)
    outs = []
    for j in range(spec.p):
        warm = []
        if warm_start is not None and warm_start[j] is not None:
            w = warm_start[j]
            warm = list(w) if isinstance(w, (list, tuple)) else [w]
        outs.append(_fit_output(spec, g, _output_column(d, j), cfg, warm, cfg.seed + 7919 * j))
    return FittedModel(spec=spec, dataset=d, outputs=tuple(outs))


# --------------------------------------------------------------------------
# prediction


def _as_queries(m: FittedModel, f0) -> tuple[np.ndarray, bool]:
    X0 = np.asarray(f0, dtype=float)
    single = X0.ndim == 1
    X0 = as_design(X0, m.spec.q)
    b = m.dataset.bounds
    if b is not None and (np.any(X0 < b[:, 0]) or np.any(X0 > b[:, 1])):
        log.warning("prediction requested outside the design bounds")
    return X0, single


def _gp_cross(m: FittedModel, o: OutputFit, X0) -> np.ndarray:
    """GP-only part ``tau2 * C(F0, F)`` of the cross covariance."""
    return kernel.cross_covariance_matrix(m.spec, o.hp.with_phi2(0.0), X0, m.dataset.design)


def predict(m: FittedModel, f0) -> np.ndarray:
    """BLUP mean ``F0 S + r(F0)^T R^-1 (Ybar - F S)``.

    ``f0`` may be a single point (returns length ``p``) or an ``(n, q)``
    array (returns ``(n, p)``).
    """
    X0, single = _as_queries(m, f0)
    out = np.empty((X0.shape[0], m.spec.p))
    for j, o in enumerate(m.outputs):
        if o.linear is None:
            K0 = kernel.cross_covariance_matrix(m.spec, o.hp, X0, m.dataset.design)
            out[:, j] = X0 @ o.S_hat + K0 @ o.alpha
        else:
            Kz = _gp_cross(m, o, X0)
            out[:, j] = X0 @ (o.S_hat + o.linear.slope_mean) + Kz @ o.linear.beta
    return out[0] if single else out


def predict_variance(m: FittedModel, f0) -> np.ndarray:
    """Predictive variance of the latent response, clamped at zero."""
    X0, single = _as_queries(m, f0)
    out = np.empty((X0.shape[0], m.spec.p))
    for j, o in enumerate(m.outputs):
        if o.linear is None:
            K0 = kernel.cross_covariance_matrix(m.spec, o.hp, X0, m.dataset.design)
            V = linalg.solve_triangular(o.bundle.chol, K0.T, lower=True, check_finite=False)
            var = kernel.prior_variance(m.spec, o.hp, X0) - np.sum(V * V, axis=0)
        else:
            lin = o.linear
            V = linalg.solve_triangular(lin.B.chol, _gp_cross(m, o, X0).T, lower=True, check_finite=False)
            H = X0 - V.T @ lin.LF  # F0 - k_z^T B^-1 F
            U = linalg.solve_triangular(lin.P_chol, H.T, lower=True, check_finite=False)
            var = o.hp.tau2 - np.sum(V * V, axis=0) + np.sum(U * U, axis=0)
        if np.any(var < 0):
            log.debug("clamped %d negative variances for output %d", int(np.sum(var < 0)), j)
        out[:, j] = np.maximum(var, 0.0)
    return out[0] if single else out


__all__ = [
    "FitConfig",
    "FittedModel",
    "OutputFit",
    "fit",
    "gls_coefficients",
    "gls_solve",
    "log_likelihood",
    "log_likelihood_gradient",
    "predict",
    "predict_variance",
]
