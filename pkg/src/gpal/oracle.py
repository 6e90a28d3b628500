"""Synthetic ground-truth response surface standing in for an expensive simulator.

The truth is ``Y*(f) = f S* + z*(f)`` where ``z*`` is one fixed draw of a
zero-mean GP, materialized as the noiseless interpolant through a seeded
maximin set of anchor points.  Observations add Gaussian actuator noise to
the input and Gaussian measurement noise to the output.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, fields

import numpy as np
from .core import as_bounds
from .design import LhdConfig, maximin_lhd
from .errors import DimensionMismatch, NonFiniteValue, OutOfBounds
from .kernel import correlation_matrix, factorize, scale_inputs

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class OracleSpec:
    S_star: np.ndarray  # (q, p)
    bounds: np.ndarray  # (q, 2)
    tau2_star: float
    theta_star: np.ndarray  # (q,), on unit-scaled inputs
    anchors: np.ndarray  # (N, q) raw forces
    anchor_weights: np.ndarray  # (N, p)
    anchor_values: np.ndarray  # (N, p), z* at the anchors
    sigma_F_star: np.ndarray  # (q, q)
    noise_var: np.ndarray  # (p,)
    seed: int = 0
    gp_enabled: bool = True

    def __post_init__(self):
        # one memory layout regardless of origin, so a reloaded spec gives bit-identical sums
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                object.__setattr__(self, f.name, np.ascontiguousarray(v, dtype=float))

    @property
    def q(self) -> int:
        return self.S_star.shape[0]

    @property
    def p(self) -> int:
        return self.S_star.shape[1]

    def with_noise(self, sigma_F_star=None, noise_var=None) -> "OracleSpec":
        """Copy with replaced noise settings (truth surface unchanged)."""
        kw = dict(self.__dict__)
        if sigma_F_star is not None:
            kw["sigma_F_star"] = np.asarray(sigma_F_star, dtype=float)
        if noise_var is not None:
            kw["noise_var"] = np.broadcast_to(np.asarray(noise_var, float), (self.p,)).copy()
        return OracleSpec(**kw)

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "p": self.p,
            "seed": self.seed,
            "gp_enabled": self.gp_enabled,
            "tau2_star": self.tau2_star,
            "theta_star": self.theta_star.tolist(),
            "bounds": self.bounds.tolist(),
            "S_star": self.S_star.tolist(),
            "sigma_F_star": self.sigma_F_star.tolist(),
            "noise_var": self.noise_var.tolist(),
            "anchors": self.anchors.tolist(),
            "anchor_weights": self.anchor_weights.tolist(),
            "anchor_values": self.anchor_values.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "OracleSpec":
        q, p = doc["q"], doc["p"]
        arr = lambda key, shape: np.asarray(doc[key], dtype=float).reshape(shape)
        n = len(doc["anchors"])
        return cls(
            S_star=arr("S_star", (q, p)),
            bounds=arr("bounds", (q, 2)),
            tau2_star=float(doc["tau2_star"]),
            theta_star=arr("theta_star", (q,)),
            anchors=arr("anchors", (n, q)),
            anchor_weights=arr("anchor_weights", (n, p)),
            anchor_values=arr("anchor_values", (n, p)),
            sigma_F_star=arr("sigma_F_star", (q, q)),
            noise_var=arr("noise_var", (p,)),
            seed=int(doc["seed"]),
            gp_enabled=bool(doc["gp_enabled"]),
        )


@dataclass(frozen=True)
class OracleConfig:
    """Knobs for :func:`build_oracle`; every default is a synthetic choice."""

    q: int = 10
    p: int = 6
    bounds: tuple = (-450.0, 450.0)
    n_anchors: int = 400
    tau2: float = 0.01
    theta: float = 2.0
    sensitivity_scale: float = 5e-5
    noise_fraction: float = 0.1
    actuator_sd: float = 2.0
    gp_enabled: bool = True

    @classmethod
    def from_dict(cls, doc: dict) -> "OracleConfig":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in doc.items()})


def _gp_part(spec: OracleSpec, X: np.ndarray) -> np.ndarray:
    if not spec.gp_enabled:
        return np.zeros((X.shape[0], spec.p))
    C = correlation_matrix(
        scale_inputs(X, spec.bounds), scale_inputs(spec.anchors, spec.bounds), spec.theta_star
    )
    return spec.tau2_star * (C @ spec.anchor_weights)


def build_oracle(cfg: OracleConfig | None = None, seed: int = 0) -> OracleSpec:
    """Draw a reproducible truth surface.

    Anchor values are drawn from ``N(0, tau2 * C(theta))`` (with diagonal
    jitter only if the Cholesky factorization needs it); the interpolation
    weights then solve ``K w = z`` and the stored anchor values are
    ``K w`` itself, so querying an anchor reproduces its stored value.
    """
    cfg = cfg or OracleConfig()
    q, p = cfg.q, cfg.p
    bounds = as_bounds(cfg.bounds, q)
    ss = np.random.SeedSequence(seed)
    s_anchor, s_draw, s_sens = ss.spawn(3)
    rng_sens = np.random.default_rng(s_sens)
    S_star = rng_sens.normal(0.0, cfg.sensitivity_scale, size=(q, p))
    theta = np.full(q, float(cfg.theta))

    anchors = maximin_lhd(
        LhdConfig(cfg.n_anchors, q, bounds, seed=int(s_anchor.generate_state(1)[0]))
    )
    if cfg.gp_enabled:
        K = cfg.tau2 * correlation_matrix(scale_inputs(anchors, bounds), scale_inputs(anchors, bounds), theta)
        bundle = factorize(K)
        u = np.random.default_rng(s_draw).standard_normal((cfg.n_anchors, p))
        draw = bundle.chol @ u
        weights = bundle.solve(draw)
    else:
        weights = np.zeros((cfg.n_anchors, p))
    spec = OracleSpec(
        S_star=S_star,
        bounds=bounds,
        tau2_star=float(cfg.tau2),
        theta_star=theta,
        anchors=anchors,
        anchor_weights=weights,
        anchor_values=np.zeros((cfg.n_anchors, p)),
        sigma_F_star=(cfg.actuator_sd ** 2) * np.eye(q),
        noise_var=np.zeros(p),
        seed=seed,
        gp_enabled=cfg.gp_enabled,
    )
    values = _gp_part(spec, anchors)
    truth = anchors @ S_star + values
    noise_var = (cfg.noise_fraction * truth.std(axis=0)) ** 2
    return OracleSpec(**{**spec.__dict__, "anchor_values": values, "noise_var": noise_var})


def _check_inputs(spec: OracleSpec, f) -> tuple[np.ndarray, bool]:
    X = np.asarray(f, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != spec.q:
        raise DimensionMismatch(f"oracle expects q={spec.q} inputs")
    if not np.all(np.isfinite(X)):
        raise NonFiniteValue("non-finite oracle input")
    if np.any(X < spec.bounds[:, 0]) or np.any(X > spec.bounds[:, 1]):
        raise OutOfBounds("oracle query outside bounds")
    return X, single


def oracle_truth(spec: OracleSpec, f) -> np.ndarray:
    """Noise-free response ``f S* + z*(f)``; ``(p,)`` for one point, ``(n, p)`` for many."""
    X, single = _check_inputs(spec, f)
    Y = X @ spec.S_star + _gp_part(spec, X)
    return Y[0] if single else Y


def oracle_observe(spec: OracleSpec, f, rng: np.random.Generator, events: list | None = None) -> np.ndarray:
    """One noisy observation at each requested point.

    The input is perturbed by ``N(0, sigma_F*)`` and clamped back into the
    bounds (each clamp is logged and appended to ``events`` if given); the
    output then gets ``N(0, noise_var)`` measurement error.  With both noise
    sources zero no random numbers are drawn and the result equals
    :func:`oracle_truth` exactly.
    """
    X, single = _check_inputs(spec, f)
    n = X.shape[0]
    if np.any(spec.sigma_F_star):
        Lf = _psd_root(spec.sigma_F_star)
        Xp = X + rng.standard_normal((n, spec.q)) @ Lf.T
        lo, hi = spec.bounds[:, 0], spec.bounds[:, 1]
        clamped = np.any((Xp < lo) | (Xp > hi), axis=1)
        if np.any(clamped):
            log.info("clamped %d perturbed oracle inputs to bounds", int(clamped.sum()))
            if events is not None:
                events.extend({"event": "clamp", "row": int(i)} for i in np.flatnonzero(clamped))
        Xp = np.clip(Xp, lo, hi)
    else:
        Xp = X
    Y = Xp @ spec.S_star + _gp_part(spec, Xp)
    if np.any(spec.noise_var):
        Y = Y + rng.standard_normal((n, spec.p)) * np.sqrt(spec.noise_var)
    return Y[0] if single else Y


def _psd_root(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(M)
    return V * np.sqrt(np.clip(w, 0.0, None))


__all__ = ["OracleConfig", "OracleSpec", "build_oracle", "oracle_observe", "oracle_truth"]
