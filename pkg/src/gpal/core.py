"""Domain types: force inputs, datasets, model configuration and hyperparameters.

Force points are plain 1-D float arrays of length ``q`` and design matrices are
``(k, q)`` arrays; the helpers here coerce and check them.  Everything else is
a small frozen dataclass whose arrays are marked read-only on construction.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    MeanInconsistent,
    NonFiniteValue,
    OutOfBounds,
)

DEFAULT_BOUNDS = (-450.0, 450.0)
MEAN_TOL = 1e-12
DUPLICATE_TOL = 1e-9


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def as_bounds(bounds, q: int) -> np.ndarray:
    """Return bounds as a ``(q, 2)`` array of ``[lo, hi]`` rows.

    Accepts a single ``(lo, hi)`` pair, applied to every dimension, or one
    pair per dimension.
    """
    if bounds is None:
        bounds = DEFAULT_BOUNDS
    b = np.asarray(bounds, dtype=float)
    if b.shape == (2,):
        b = np.tile(b, (q, 1))
    if b.shape != (q, 2):
        raise DimensionMismatch(f"bounds shape {b.shape} incompatible with q={q}")
    if not np.all(b[:, 0] < b[:, 1]):
        raise ValueError("bounds require lo < hi in every dimension")
    return b


def as_force_point(f, q: int | None = None, bounds=None) -> np.ndarray:
    """Coerce ``f`` to a finite length-``q`` vector, optionally bounds-checked."""
    x = np.asarray(f, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch(f"force point must be 1-D, got shape {x.shape}")
    if q is not None and x.shape[0] != q:
        raise DimensionMismatch(f"force point has length {x.shape[0]}, expected {q}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteValue("force point contains non-finite entries")
    if bounds is not None:
        b = as_bounds(bounds, x.shape[0])
        if np.any(x < b[:, 0]) or np.any(x > b[:, 1]):
            raise OutOfBounds(f"force point {x} outside bounds")
    return x


def as_design(rows, q: int | None = None) -> np.ndarray:
    """Coerce ``rows`` to a ``(k, q)`` design matrix with k >= 1."""
    try:
        X = np.asarray(rows, dtype=float)
    except ValueError as exc:  # ragged input
        raise DimensionMismatch("design rows have differing lengths") from exc
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[0] < 1:
        raise DimensionMismatch(f"design must be (k, q) with k >= 1, got {X.shape}")
    if q is not None and X.shape[1] != q:
        raise DimensionMismatch(f"design has {X.shape[1]} columns, expected {q}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteValue("design contains non-finite entries")
    return X


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed input/output pairs with per-point replications.

    ``responses[t]`` is an ``(n_t, p)`` array of replicate outputs at
    ``design[t]`` and ``sample_means[t]`` their column means.  Use
    :meth:`from_responses` to build a consistent instance; the raw constructor
    performs no checking so malformed data can reach :func:`validate_dataset`.
    """

    design: np.ndarray
    replications: np.ndarray
    responses: tuple
    sample_means: np.ndarray
    bounds: np.ndarray | None = None

    @classmethod
    def from_responses(cls, design, responses, bounds=None) -> "Dataset":
        X = as_design(design)
        k, q = X.shape
        if len(responses) != k:
            raise DimensionMismatch(f"{len(responses)} response blocks for {k} design points")
        blocks = []
        for r in responses:
            r = np.asarray(r, dtype=float)
            if r.ndim == 1:
                r = r[None, :]
            if r.ndim != 2 or (blocks and r.shape[1] != blocks[0].shape[1]):
                raise DimensionMismatch("every response block must be (n_t, p) with the same p")
            blocks.append(_frozen(r))
        means = np.array([b.mean(axis=0) for b in blocks])
        d = cls(
            design=_frozen(X),
            replications=_frozen([b.shape[0] for b in blocks], dtype=int),
            responses=tuple(blocks),
            sample_means=_frozen(means),
            bounds=_frozen(as_bounds(bounds, q)),
        )
        validate_dataset(d)
        return d

    @property
    def k(self) -> int:
        return int(np.shape(self.design)[0])

    @property
    def q(self) -> int:
        return int(np.shape(self.design)[1])

    @property
    def p(self) -> int:
        return int(np.shape(self.sample_means)[1])

    def find(self, force) -> int | None:
        """Index of the design row equal to ``force`` within ``DUPLICATE_TOL``, else ``None``."""
        f = np.asarray(force, dtype=float)
        hit = np.flatnonzero(np.max(np.abs(self.design - f), axis=1) <= DUPLICATE_TOL)
        return int(hit[0]) if hit.size else None

    def append(self, force, response) -> "Dataset":
        """Return a new dataset with one more observation.

        A force that repeats an existing design point becomes another
        replicate there instead of a new row.
        """
        f = np.asarray(force, dtype=float)
        t = self.find(f)
        if t is None:
            X = np.vstack([self.design, f[None, :]])
            return Dataset.from_responses(X, list(self.responses) + [response], self.bounds)
        blocks = list(self.responses)
        blocks[t] = np.vstack([blocks[t], np.atleast_2d(np.asarray(response, dtype=float))])
        return Dataset.from_responses(self.design, blocks, self.bounds)

    def drop(self, index: int) -> "Dataset":
        keep = [t for t in range(self.k) if t != index]
        return Dataset.from_responses(
            self.design[keep], [self.responses[t] for t in keep], self.bounds
        )

    def equals(self, other: "Dataset") -> bool:
        """Field-for-field exact equality."""
        if not isinstance(other, Dataset) or len(self.responses) != len(other.responses):
            return False
        same = (
            np.array_equal(self.design, other.design)
            and np.array_equal(self.replications, other.replications)
            and np.array_equal(self.sample_means, other.sample_means)
            and all(np.array_equal(a, b) for a, b in zip(self.responses, other.responses))
        )
        if self.bounds is None or other.bounds is None:
            return same and self.bounds is other.bounds
        return same and np.array_equal(self.bounds, other.bounds)

    # JSON schema: {q, p, bounds, points: [{force: [...], replicates: [[...]]}]}
    def to_dict(self) -> dict:
        b = self.bounds if self.bounds is not None else as_bounds(None, self.q)
        return {
            "q": self.q,
            "p": self.p,
            "bounds": np.asarray(b).tolist(),
            "points": [
                {"force": self.design[t].tolist(), "replicates": self.responses[t].tolist()}
                for t in range(self.k)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Dataset":
        pts = doc["points"]
        d = cls.from_responses(
            [pt["force"] for pt in pts],
            [np.asarray(pt["replicates"], dtype=float).reshape(-1, doc["p"]) for pt in pts],
            doc.get("bounds"),
        )
        if d.q != doc["q"] or d.p != doc["p"]:
            raise DimensionMismatch("declared q/p disagree with point data")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Dataset":
        return cls.from_dict(json.loads(text))


def validate_dataset(d: Dataset) -> None:
    """Raise if any dataset invariant fails; otherwise return ``None``.

    Pure: never mutates ``d``.
    """
    try:
        rows = [np.asarray(r, dtype=float) for r in d.design]
    except (TypeError, ValueError) as exc:
        raise DimensionMismatch("design rows are not numeric vectors") from exc
    if not rows:
        raise DimensionMismatch("dataset has no design points")
    q = rows[0].shape[0] if rows[0].ndim == 1 else -1
    if q < 1 or any(r.ndim != 1 or r.shape[0] != q for r in rows):
        raise DimensionMismatch("design rows have differing lengths")
    X = np.vstack(rows)
    k = X.shape[0]
    if not np.all(np.isfinite(X)):
        raise NonFiniteValue("design contains non-finite entries")

    reps = np.asarray(d.replications)
    if reps.shape != (k,) or np.any(reps < 1):
        raise DimensionMismatch("replications must be a positive vector of length k")
    if len(d.responses) != k:
        raise DimensionMismatch("one response block per design point required")

    means = np.asarray(d.sample_means, dtype=float)
    if means.ndim != 2 or means.shape[0] != k or means.shape[1] < 1:
        raise DimensionMismatch(f"sample_means shape {means.shape} invalid for k={k}")
    p = means.shape[1]
    if not np.all(np.isfinite(means)):
        raise NonFiniteValue("sample means contain non-finite entries")

    for t, block in enumerate(d.responses):
        block = np.asarray(block, dtype=float)
        if block.shape != (int(reps[t]), p):
            raise DimensionMismatch(
                f"point {t}: responses shape {block.shape}, expected ({int(reps[t])}, {p})"
            )
        if not np.all(np.isfinite(block)):
            raise NonFiniteValue(f"point {t}: non-finite response")
        expected = block.mean(axis=0)
        if np.any(np.abs(expected - means[t]) > MEAN_TOL * np.maximum(1.0, np.abs(expected))):
            raise MeanInconsistent(f"point {t}: sample mean disagrees with replicates")

    if d.bounds is not None:
        b = as_bounds(d.bounds, q)
        if np.any(X < b[:, 0]) or np.any(X > b[:, 1]):
            raise OutOfBounds("design point outside configured bounds")


class Variant(str, enum.Enum):
    KRIGING = "kriging"
    SURROGATE = "surrogate"


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Model configuration shared by every output.

    ``sigma_F`` is the known actuator-uncertainty covariance (only used by the
    surrogate variant).  ``bounds``, when given, rescales inputs to the unit
    cube before any correlation is evaluated; ``None`` leaves them as-is.
    """

    variant: Variant
    q: int
    p: int = 1
    sigma_F: np.ndarray | None = None
    weights: np.ndarray | None = None
    isotropic: bool = False
    bounds: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.q < 1 or self.p < 1:
            raise ValueError("q and p must be positive")
        sf = np.zeros((self.q, self.q)) if self.sigma_F is None else np.asarray(self.sigma_F, float)
        if sf.shape != (self.q, self.q):
            raise DimensionMismatch(f"sigma_F must be {self.q}x{self.q}")
        if not np.allclose(sf, sf.T, atol=1e-12):
            raise ValueError("sigma_F must be symmetric")
        if np.linalg.eigvalsh(sf).min() < -1e-10 * max(1.0, np.abs(sf).max()):
            raise ValueError("sigma_F must be positive semi-definite")
        object.__setattr__(self, "sigma_F", _frozen(sf))
        w = np.full(self.p, 1.0 / self.p) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != (self.p,):
            raise DimensionMismatch(f"weights must have length p={self.p}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "weights", _frozen(w))
        if self.bounds is not None:
            object.__setattr__(self, "bounds", _frozen(as_bounds(self.bounds, self.q)))

    @property
    def m(self) -> int:
        """Number of correlation length-scale parameters."""
        return 1 if self.isotropic else self.q

    @property
    def n_params(self) -> int:
        return self.m + (3 if self.variant is Variant.SURROGATE else 2)

    def param_names(self) -> list[str]:
        """Fixed ordering: tau2, theta_1..theta_m, sigma2[, phi2]."""
        names = ["tau2"] + [f"theta_{d + 1}" for d in range(self.m)] + ["sigma2"]
        if self.variant is Variant.SURROGATE:
            names.append("phi2")
        return names

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "q": self.q,
            "p": self.p,
            "sigma_F": self.sigma_F.tolist(),
            "weights": self.weights.tolist(),
            "isotropic": self.isotropic,
            "bounds": None if self.bounds is None else self.bounds.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelSpec":
        return cls(**doc)


@dataclass(frozen=True, eq=False)
class Hyperparameters:
    tau2: float
    theta: np.ndarray
    sigma2: float
    phi2: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "theta", _frozen(np.atleast_1d(self.theta)))
        object.__setattr__(self, "tau2", float(self.tau2))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        if self.phi2 is not None:
            object.__setattr__(self, "phi2", float(self.phi2))

    def validate(self, spec: ModelSpec) -> None:
        if not self.tau2 > 0:
            raise ValueError("tau2 must be strictly positive")
        if self.theta.shape != (spec.m,) or np.any(self.theta <= 0):
            raise ValueError(f"theta must be a positive vector of length {spec.m}")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        if spec.variant is Variant.SURROGATE:
            if self.phi2 is None or self.phi2 < 0:
                raise ValueError("surrogate variant needs phi2 >= 0")
        elif self.phi2 not in (None, 0.0):
            raise ValueError("phi2 only applies to the surrogate variant")

    def with_phi2(self, phi2: float | None) -> "Hyperparameters":
        return Hyperparameters(self.tau2, self.theta, self.sigma2, phi2)

    def to_vector(self, spec: ModelSpec) -> np.ndarray:
        parts = [[self.tau2], self.theta, [self.sigma2]]
        if spec.variant is Variant.SURROGATE:
            parts.append([self.phi2 or 0.0])
        return np.concatenate(parts).astype(float)

    @classmethod
    def from_vector(cls, spec: ModelSpec, vec: Sequence[float]) -> "Hyperparameters":
        v = np.asarray(vec, dtype=float)
        if v.shape != (spec.n_params,):
            raise DimensionMismatch(f"expected {spec.n_params} parameters, got {v.shape}")
        m = spec.m
        phi2 = float(v[m + 2]) if spec.variant is Variant.SURROGATE else None
        return cls(tau2=v[0], theta=v[1 : m + 1], sigma2=v[m + 1], phi2=phi2)

    def to_dict(self) -> dict:
        return {"tau2": self.tau2, "theta": self.theta.tolist(), "sigma2": self.sigma2, "phi2": self.phi2}

    @classmethod
    def from_dict(cls, doc: dict) -> "Hyperparameters":
        return cls(**doc)


__all__ = [
    "DEFAULT_BOUNDS",
    "Dataset",
    "Hyperparameters",
    "ModelSpec",
    "Variant",
    "as_bounds",
    "as_design",
    "as_force_point",
    "validate_dataset",
]
