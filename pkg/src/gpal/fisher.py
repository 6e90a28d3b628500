"""Fisher information of the covariance hyperparameters and the D-optimality score.

For output ``j`` with design ``F``, covariance ``R`` and residual
``r = Ybar - F S``::

    I_ab = dS_a^T (F^T R^-1 F) dS_b + 1/2 tr(R^-1 dR_a R^-1 dR_b)
    dS_a = -(F^T R^-1 F)^-1 F^T R^-1 dR_a R^-1 r

Parameters follow :meth:`ModelSpec.param_names` ordering.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import kernel
from .core import Variant, as_force_point
from .errors import DimensionMismatch, RankDeficientDesign, SingularInformation
from .gp import FittedModel

log = logging.getLogger(__name__)

COND_LIMIT = 1e12
RIDGE = 1e-10


@dataclass(frozen=True, eq=False)
class FisherMatrix:
    matrix: np.ndarray
    labels: tuple

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] != len(self.labels):
            raise DimensionMismatch("Fisher matrix must be square with one label per row")
        object.__setattr__(self, "matrix", M)


def _parts(F, bundle, dR, resid):
    k = F.shape[0]
    Rinv = bundle.solve(np.eye(k))
    RiF = Rinv @ F
    A = F.T @ RiF
    try:
        cA = linalg.cho_factor(A, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise RankDeficientDesign("F^T R^-1 F is singular") from None
    alpha = Rinv @ resid
    U = np.einsum("kq,akl,l->aq", RiF, dR, alpha)  # F^T R^-1 dR_a R^-1 r
    dS = -linalg.cho_solve(cA, U.T, check_finite=False).T
    return Rinv, A, dS


def coefficient_derivatives(F, bundle, dR, resid) -> np.ndarray:
    """``dS/dparam_a`` for every stacked derivative ``dR[a]``; shape ``(P, q)``."""
    return _parts(F, bundle, dR, resid)[2]


def fisher_from_parts(F, bundle: kernel.CovarianceBundle, dR: np.ndarray, resid) -> np.ndarray:
    """Information matrix from explicit ingredients.

    ``dR`` is a stack ``(P, k, k)`` of covariance derivatives; any subset of
    parameters may be supplied.
    """
    F = np.asarray(F, dtype=float)
    resid = np.asarray(resid, dtype=float)
    Rinv, A, dS = _parts(F, bundle, dR, resid)
    M = Rinv @ dR  # (P, k, k), broadcast
    trace_term = 0.5 * np.einsum("aij,bji->ab", M, M)
    I = dS @ A @ dS.T + trace_term
    return 0.5 * (I + I.T)


def trace_term(bundle: kernel.CovarianceBundle, dR: np.ndarray) -> np.ndarray:
    """Only the ``1/2 tr(R^-1 dR_a R^-1 dR_b)`` part."""
    M = bundle.solve(np.eye(bundle.R.shape[0])) @ dR
    T = 0.5 * np.einsum("aij,bji->ab", M, M)
    return 0.5 * (T + T.T)


def _augmented_stacks(m: FittedModel, j: int, P: np.ndarray):
    """Covariances and derivative stacks of the design extended by each row of ``P``.

    Returns ``(F, R, dR, resid)`` with shapes ``(N, K, q)``, ``(N, K, K)``,
    ``(N, n_params, K, K)`` and ``(K,)``, where ``K = k + 1``.
    """
    spec, d = m.spec, m.dataset
    o = m.outputs[j]
    hp = o.hp
    X = np.asarray(d.design, dtype=float)
    k, N = X.shape[0], P.shape[0]
    g = kernel.geometry(spec, X, d.replications)
    R0 = kernel.covariance_from_geometry(spec, hp, o.S_hat, g)
    dR0 = kernel.derivatives_from_geometry(spec, hp, g)

    Zp = kernel.scale_inputs(P, spec.bounds)
    Dx = kernel.squared_differences(Zp, g.Z, spec.isotropic)  # (N, k, m)
    c = np.exp(-Dx @ hp.theta)  # (N, k)
    ncross = np.empty((N, spec.n_params, k))
    ndiag = np.zeros((N, spec.n_params))
    ncross[:, 0] = c
    ndiag[:, 0] = 1.0
    ncross[:, 1 : spec.m + 1] = -hp.tau2 * np.moveaxis(Dx, 2, 1) * c[:, None, :]
    ncross[:, spec.m + 1] = 0.0
    ndiag[:, spec.m + 1] = 1.0
    rcross = hp.tau2 * c
    rdiag = np.full(N, hp.tau2 + hp.sigma2)
    if spec.variant is Variant.SURROGATE:
        XP = P @ X.T
        pp = np.sum(P * P, axis=1)
        ncross[:, spec.m + 2] = XP
        ndiag[:, spec.m + 2] = pp
        phi2 = hp.phi2 or 0.0
        rcross = rcross + phi2 * XP
        rdiag = rdiag + phi2 * pp + kernel.input_noise_variance(spec, o.S_hat)

    K = k + 1
    R = np.empty((N, K, K))
    R[:, :k, :k] = R0
    R[:, :k, k] = rcross
    R[:, k, :k] = rcross
    R[:, k, k] = rdiag
    dR = np.empty((N, spec.n_params, K, K))
    dR[:, :, :k, :k] = dR0
    dR[:, :, :k, k] = ncross
    dR[:, :, k, :k] = ncross
    dR[:, :, k, k] = ndiag
    F = np.empty((N, K, spec.q))
    F[:, :k] = X
    F[:, k] = P
    resid = np.append(d.sample_means[:, j] - X @ o.S_hat, 0.0)
    return F, R, dR, resid


def _stacked_inverse(R: np.ndarray) -> np.ndarray:
    try:
        Li = np.linalg.inv(np.linalg.cholesky(R))
        return np.swapaxes(Li, 1, 2) @ Li
    except np.linalg.LinAlgError:
        eye = np.eye(R.shape[1])
        return np.stack([kernel.factorize(Rn).solve(eye) for Rn in R])


def augmented_information(m: FittedModel, j: int, pool) -> np.ndarray:
    """Information matrices for output ``j`` with each pool row appended to the design.

    Hyperparameters and ``S_hat`` stay at the current fit and the unobserved
    candidate contributes a zero residual.  A candidate that repeats a design
    point counts as one more replicate there, matching :meth:`Dataset.append`.
    Returns shape ``(N, P, P)``.
    """
    P = np.atleast_2d(np.asarray(pool, dtype=float))
    if P.ndim != 2 or P.shape[1] != m.spec.q:
        raise DimensionMismatch(f"candidate rows must have q={m.spec.q} columns")
    dup = {n: t for n, f in enumerate(P) if (t := m.dataset.find(f)) is not None}
    if dup:
        out = np.empty((P.shape[0], m.spec.n_params, m.spec.n_params))
        fresh = [n for n in range(P.shape[0]) if n not in dup]
        if fresh:
            out[fresh] = augmented_information(m, j, P[fresh])
        for n, t in dup.items():
            out[n] = _replicated_information(m, j, t)
        return out
    F, R, dR, resid = _augmented_stacks(m, j, P)
    Rinv = _stacked_inverse(R)
    RiF = Rinv @ F
    A = np.swapaxes(F, 1, 2) @ RiF
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise RankDeficientDesign("F^T R^-1 F is singular") from None
    alpha = Rinv @ resid
    U = (dR @ alpha[:, None, :, None])[..., 0] @ RiF  # (N, P, q)
    dS = -np.swapaxes(np.linalg.solve(A, np.swapaxes(U, 1, 2)), 1, 2)
    M = Rinv[:, None] @ dR
    n, a, K = M.shape[0], M.shape[1], M.shape[2]
    T = 0.5 * (M.reshape(n, a, K * K) @ np.swapaxes(np.swapaxes(M, 2, 3).reshape(n, a, K * K), 1, 2))
    I = dS @ A @ np.swapaxes(dS, 1, 2) + T
    return 0.5 * (I + np.swapaxes(I, 1, 2))


def _replicated_information(m: FittedModel, j: int, t: int) -> np.ndarray:
    """Information when design point ``t`` receives one more replicate."""
    spec, d = m.spec, m.dataset
    o = m.outputs[j]
    X = np.asarray(d.design, dtype=float)
    reps = np.asarray(d.replications).copy()
    reps[t] += 1
    g = kernel.geometry(spec, X, reps)
    bundle = kernel.factorize(kernel.covariance_from_geometry(spec, o.hp, o.S_hat, g))
    dR = kernel.derivatives_from_geometry(spec, o.hp, g)
    return fisher_from_parts(X, bundle, dR, d.sample_means[:, j] - X @ o.S_hat)


def fisher_information(m: FittedModel, j: int = 0, augmented_with=None) -> FisherMatrix:
    """Information about output ``j``'s hyperparameters at the fitted values.

    With ``augmented_with``, the candidate force point is appended to the
    design first (see :func:`augmented_information`).
    """
    spec, d = m.spec, m.dataset
    labels = tuple(spec.param_names())
    if augmented_with is not None:
        f = as_force_point(augmented_with, spec.q)
        return FisherMatrix(augmented_information(m, j, f[None, :])[0], labels)
    o = m.outputs[j]
    X = np.asarray(d.design, dtype=float)
    resid = d.sample_means[:, j] - X @ o.S_hat
    g = kernel.geometry(spec, X, d.replications)
    dR = kernel.derivatives_from_geometry(spec, o.hp, g)
    return FisherMatrix(fisher_from_parts(X, o.bundle, dR, resid), labels)


def d_optimality_scores(stack) -> np.ndarray:
    """:func:`d_optimality_score` for a stack of matrices, shape ``(N, P, P)``."""
    M = np.asarray(stack, dtype=float)
    M = 0.5 * (M + np.swapaxes(M, 1, 2))
    if not np.all(np.isfinite(M)):
        raise SingularInformation("information matrix has non-finite entries")
    bad = np.linalg.cond(M) > COND_LIMIT
    if np.any(bad):
        ridge = RIDGE * np.mean(np.diagonal(M[bad], axis1=1, axis2=2), axis=1)
        log.debug("regularizing %d information matrices", int(bad.sum()))
        M = M.copy()
        M[bad] += ridge[:, None, None] * np.eye(M.shape[1])
    sign, logdet = np.linalg.slogdet(M)
    if np.any(sign <= 0) or not np.all(np.isfinite(logdet)):
        raise SingularInformation("information matrix is not positive definite")
    return np.exp(-logdet)


def d_optimality_score(fi) -> float:
    """``det(I^-1)``, computed as ``exp(-logdet I)``.

    Badly conditioned matrices (condition number above 1e12) get a ridge of
    ``1e-10 * mean(diag)`` first.
    """
    M = fi.matrix if isinstance(fi, FisherMatrix) else np.asarray(fi, dtype=float)
    return float(d_optimality_scores(M[None])[0])


__all__ = [
    "FisherMatrix",
    "augmented_information",
    "coefficient_derivatives",
    "d_optimality_score",
    "d_optimality_scores",
    "fisher_from_parts",
    "fisher_information",
    "trace_term",
]
