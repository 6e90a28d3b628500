"""Latin hypercube designs with maximin improvement."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import as_bounds


def latin_hypercube(n: int, dims: int, rng: np.random.Generator, centered: bool = False) -> np.ndarray:
    """Random LHD on the unit cube; ``centered`` puts points at bin midpoints."""
    perms = np.column_stack([rng.permutation(n) for _ in range(dims)]) if dims else np.empty((n, 0))
    offset = 0.5 if centered else rng.random((n, dims))
    return (perms + offset) / n


def to_unit(X, bounds) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    b = as_bounds(bounds, X.shape[1])
    return (X - b[:, 0]) / (b[:, 1] - b[:, 0])


def from_unit(U, bounds) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    b = as_bounds(bounds, U.shape[1])
    return b[:, 0] + U * (b[:, 1] - b[:, 0])


def bin_indices(X, bounds, n: int | None = None) -> np.ndarray:
    """Integer bin of each entry when every axis is cut into ``n`` equal intervals."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0] if n is None else n
    idx = np.floor(to_unit(X, bounds) * n).astype(int)
    return np.clip(idx, 0, n - 1)


def is_latin(X, bounds) -> bool:
    """Each column, bin-indexed into ``k`` intervals, is a permutation of ``0..k-1``."""
    idx = bin_indices(X, bounds)
    k = idx.shape[0]
    target = np.arange(k)
    return all(np.array_equal(np.sort(idx[:, c]), target) for c in range(idx.shape[1]))


def _sq_dists(U: np.ndarray) -> np.ndarray:
    diff = U[:, None, :] - U[None, :, :]
    D = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(D, np.inf)
    return D


def min_pairwise_distance(X, bounds=None) -> float:
    """Smallest Euclidean distance between two rows, on unit-scaled axes if ``bounds`` given."""
    U = np.asarray(X, dtype=float) if bounds is None else to_unit(X, bounds)
    if U.shape[0] < 2:
        return float("inf")
    return float(np.sqrt(_sq_dists(U).min()))


@dataclass(frozen=True)
class LhdConfig:
    n: int
    q: int
    bounds: tuple | np.ndarray = (-450.0, 450.0)
    seed: int = 0
    sweeps: int = 2000

    def __post_init__(self):
        if self.n < 1 or self.q < 1:
            raise ValueError("n and q must be at least 1")
        as_bounds(self.bounds, self.q)  # raises on lo >= hi
        if self.sweeps < 0:
            raise ValueError("sweeps must be nonnegative")


def maximin_lhd(cfg: LhdConfig, return_initial: bool = False):
    """Midpoint Latin hypercube improved by coordinate swaps.

    Starting from a random LHD, each sweep swaps one coordinate between a
    point of the current closest pair and another random point; the swap is
    kept only when the minimum pairwise distance strictly increases.  Swaps
    within a column keep every column a permutation, so the Latin property
    is preserved throughout.
    """
    rng = np.random.default_rng(cfg.seed)
    n, q = cfg.n, cfg.q
    U = latin_hypercube(n, q, rng, centered=True)
    initial = U.copy()
    if n > 2:
        D = _sq_dists(U)
        best = D.min()
        for _ in range(cfg.sweeps):
            i, j = np.unravel_index(np.argmin(D), D.shape)
            r1 = i if rng.random() < 0.5 else j
            r2 = int(rng.integers(n - 1))
            r2 += r2 >= r1
            c = int(rng.integers(q))
            U[[r1, r2], c] = U[[r2, r1], c]
            D_new = D.copy()
            for r in (r1, r2):
                row = np.sum((U - U[r]) ** 2, axis=1)
                row[r] = np.inf
                D_new[r, :] = row
                D_new[:, r] = row
            new_min = D_new.min()
            if new_min > best:
                D, best = D_new, new_min
            else:
                U[[r1, r2], c] = U[[r2, r1], c]
    X = from_unit(U, cfg.bounds)
    if return_initial:
        return X, from_unit(initial, cfg.bounds)
    return X


def write_design_csv(path, X) -> None:
    X = np.asarray(X, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{c + 1}" for c in range(X.shape[1])])
        for row in X:
            w.writerow([repr(float(v)) for v in row])


def read_design_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)


__all__ = [
    "LhdConfig",
    "bin_indices",
    "from_unit",
    "is_latin",
    "latin_hypercube",
    "maximin_lhd",
    "min_pairwise_distance",
    "read_design_csv",
    "to_unit",
    "write_design_csv",
]
