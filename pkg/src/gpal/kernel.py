"""Squared-exponential correlation, covariance assembly and its parameter derivatives.

Covariance among training means, for output ``j``::

    kriging:    R = tau2 * C + sigma2 * diag(1/n_t)
    surrogate:  R = phi2 * F F^T + tau2 * C + (S^T Sigma_F S) * I + sigma2 * diag(1/n_t)

where ``C[m, n] = exp(-sum_d theta_d (x_md - x_nd)^2)`` is evaluated on inputs
rescaled to the unit cube when the model spec carries bounds.  The linear
terms (``F F^T``, ``F S``) always use raw forces.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .core import Dataset, Hyperparameters, ModelSpec, Variant, as_force_point
from .errors import DimensionMismatch, NotPositiveDefinite, UnknownParameter

JITTER_START = 1e-10
JITTER_MAX = 1e-4


def correlation(a, b, theta) -> float:
    """``exp(-sum_d theta_d (a_d - b_d)^2)``; a scalar ``theta`` is isotropic."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatch(f"points of shape {a.shape} and {b.shape}")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.size not in (1, a.size):
        raise DimensionMismatch(f"theta of length {theta.size} for q={a.size}")
    if np.any(theta <= 0):
        raise ValueError("theta must be positive")
    return float(np.exp(-np.sum(theta * (a - b) ** 2)))


def scale_inputs(X, bounds) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if bounds is None:
        return X
    lo, hi = bounds[:, 0], bounds[:, 1]
    return (X - lo) / (hi - lo)


def squared_differences(A, B, isotropic: bool = False) -> np.ndarray:
    """Per-dimension squared lags, shape ``(n, k, q)`` (or ``(n, k, 1)``)."""
    D = (A[:, None, :] - B[None, :, :]) ** 2
    if isotropic:
        D = D.sum(axis=2, keepdims=True)
    return D


def correlation_matrix(A, B, theta, isotropic: bool = False) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    return np.exp(-squared_differences(A, B, isotropic) @ np.asarray(theta, dtype=float))


@dataclass(frozen=True, eq=False)
class Geometry:
    """Hyperparameter-independent pieces of a design, computed once per fit."""

    X: np.ndarray  # raw forces (k, q)
    Z: np.ndarray  # kernel coordinates (k, q)
    D: np.ndarray  # squared lags (k, k, m)
    FFt: np.ndarray  # raw X X^T
    inv_reps: np.ndarray  # 1 / n_t

    @property
    def k(self) -> int:
        return self.X.shape[0]


def geometry(spec: ModelSpec, X, reps=None) -> Geometry:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != spec.q:
        raise DimensionMismatch(f"design shape {X.shape} for q={spec.q}")
    reps = np.ones(X.shape[0]) if reps is None else np.asarray(reps, dtype=float)
    Z = scale_inputs(X, spec.bounds)
    return Geometry(
        X=X,
        Z=Z,
        D=squared_differences(Z, Z, spec.isotropic),
        FFt=X @ X.T,
        inv_reps=1.0 / reps,
    )


def input_noise_variance(spec: ModelSpec, S) -> float:
    """Variance ``S^T Sigma_F S`` propagated from actuator uncertainty."""
    if spec.variant is not Variant.SURROGATE or S is None:
        return 0.0
    S = np.asarray(S, dtype=float)
    if S.shape != (spec.q,):
        raise DimensionMismatch(f"S must have length q={spec.q}")
    return float(S @ spec.sigma_F @ S)


def covariance_from_geometry(spec: ModelSpec, hp: Hyperparameters, S, g: Geometry) -> np.ndarray:
    C = np.exp(-g.D @ hp.theta)
    R = hp.tau2 * C
    R[np.diag_indices_from(R)] += hp.sigma2 * g.inv_reps
    if spec.variant is Variant.SURROGATE:
        R += (hp.phi2 or 0.0) * g.FFt
        R[np.diag_indices_from(R)] += input_noise_variance(spec, S)
    return R


def derivatives_from_geometry(spec: ModelSpec, hp: Hyperparameters, g: Geometry) -> np.ndarray:
    """Stack of ``dR/dparam`` in the order of :meth:`ModelSpec.param_names`."""
    k, m = g.k, spec.m
    C = np.exp(-g.D @ hp.theta)
    out = np.empty((spec.n_params, k, k))
    out[0] = C
    out[1 : m + 1] = -hp.tau2 * np.moveaxis(g.D, 2, 0) * C
    out[m + 1] = np.diag(g.inv_reps)
    if spec.variant is Variant.SURROGATE:
        out[m + 2] = g.FFt
    return out


@dataclass(frozen=True, eq=False)
class CovarianceBundle:
    R: np.ndarray
    chol: np.ndarray  # lower triangular, of R + jitter * I
    logdet: float
    jitter: float = 0.0

    def solve(self, b) -> np.ndarray:
        return linalg.cho_solve((self.chol, True), b, check_finite=False)


def factorize(R: np.ndarray) -> CovarianceBundle:
    """Cholesky with escalating diagonal jitter.

    Tries the bare matrix first, then ``1e-10 * mean(diag)`` growing by 10x up
    to ``1e-4 * mean(diag)``.
    """
    scale = float(np.mean(np.diag(R)))
    if not np.isfinite(scale) or scale <= 0:
        raise NotPositiveDefinite("covariance diagonal is not positive")
    jitter = 0.0
    rel = JITTER_START
    while True:
        try:
            A = R if jitter == 0.0 else R + jitter * np.eye(R.shape[0])
            L = linalg.cholesky(A, lower=True, check_finite=False)
            break
        except linalg.LinAlgError:
            if rel > JITTER_MAX * (1 + 1e-9):
                raise NotPositiveDefinite(
                    f"Cholesky failed with jitter up to {JITTER_MAX:g} * mean(diag)"
                ) from None
            jitter = rel * scale
            rel *= 10.0
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return CovarianceBundle(R=R, chol=L, logdet=logdet, jitter=jitter)


def assemble_covariance(spec: ModelSpec, hp: Hyperparameters, S, d: Dataset) -> CovarianceBundle:
    """Covariance among the sample means of ``d`` for one output."""
    hp.validate(spec)
    g = geometry(spec, d.design, d.replications)
    return factorize(covariance_from_geometry(spec, hp, S, g))


def cross_covariance_matrix(spec: ModelSpec, hp: Hyperparameters, X0, X) -> np.ndarray:
    """``Cov[Y(x0_i), Ybar(x_t)]`` for every row pair, shape ``(n0, k)``."""
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    X = np.asarray(X, dtype=float)
    if X0.shape[1] != spec.q or X.shape[1] != spec.q:
        raise DimensionMismatch("cross covariance inputs must have q columns")
    C = correlation_matrix(
        scale_inputs(X0, spec.bounds), scale_inputs(X, spec.bounds), hp.theta, spec.isotropic
    )
    K = hp.tau2 * C
    if spec.variant is Variant.SURROGATE:
        K = K + (hp.phi2 or 0.0) * (X0 @ X.T)
    return K


def cross_covariance(spec: ModelSpec, hp: Hyperparameters, S, d: Dataset, f0) -> np.ndarray:
    """Length-``k`` covariance between the latent response at ``f0`` and the training means.

    ``S`` is accepted for signature symmetry with :func:`assemble_covariance`;
    the cross terms do not depend on it.
    """
    f0 = as_force_point(f0, spec.q)
    return cross_covariance_matrix(spec, hp, f0[None, :], d.design)[0]


def prior_variance(spec: ModelSpec, hp: Hyperparameters, X0) -> np.ndarray:
    """Prior variance of the latent response ``F0 S_tilde + z(F0)`` at each row of ``X0``."""
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    v = np.full(X0.shape[0], hp.tau2)
    if spec.variant is Variant.SURROGATE:
        v = v + (hp.phi2 or 0.0) * np.sum(X0 * X0, axis=1)
    return v


def covariance_derivative(spec: ModelSpec, hp: Hyperparameters, S, d: Dataset, which) -> np.ndarray:
    """Analytic ``dR/dparam`` for one parameter, by index or name."""
    names = spec.param_names()
    if isinstance(which, str):
        if which not in names:
            raise UnknownParameter(which)
        a = names.index(which)
    else:
        a = int(which)
        if not 0 <= a < len(names):
            raise UnknownParameter(which)
    g = geometry(spec, d.design, d.replications)
    return derivatives_from_geometry(spec, hp, g)[a]


__all__ = [
    "CovarianceBundle",
    "Geometry",
    "assemble_covariance",
    "correlation",
    "correlation_matrix",
    "covariance_derivative",
    "covariance_from_geometry",
    "cross_covariance",
    "cross_covariance_matrix",
    "derivatives_from_geometry",
    "factorize",
    "geometry",
    "input_noise_variance",
    "prior_variance",
    "scale_inputs",
]
