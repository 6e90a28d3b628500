"""Independent reference implementations used as test oracles.

Everything here is written from the model definition with explicit loops,
explicit inverses and determinants; none of it calls into the package's
linear algebra so agreement is a real cross-check.
"""
import math
from fractions import Fraction

import numpy as np

from gpal.core import Dataset, Hyperparameters, ModelSpec


def scaled(x, bounds):
    if bounds is None:
        return np.asarray(x, dtype=float)
    b = np.asarray(bounds, dtype=float)
    return (np.asarray(x, dtype=float) - b[:, 0]) / (b[:, 1] - b[:, 0])


def corr_loop(a, b, theta):
    s = 0.0
    for d in range(len(a)):
        s += theta[d] * (a[d] - b[d]) ** 2
    return math.exp(-s)


def latent_cov(spec, hp, A, B):
    """Cov of the latent response between two sets of raw points."""
    out = np.zeros((len(A), len(B)))
    theta = np.broadcast_to(hp.theta, (spec.q,)) if spec.isotropic else hp.theta
    for m, a in enumerate(A):
        for n, b in enumerate(B):
            v = hp.tau2 * corr_loop(scaled(a, spec.bounds), scaled(b, spec.bounds), theta)
            if spec.variant.value == "surrogate":
                v += (hp.phi2 or 0.0) * float(np.dot(a, b))
            out[m, n] = v
    return out


def observed_cov(spec, hp, S, X, reps):
    """Covariance of the sample means: latent part plus propagated input noise plus output noise."""
    R = latent_cov(spec, hp, X, X)
    extra = 0.0
    if spec.variant.value == "surrogate":
        extra = float(S @ spec.sigma_F @ S)
    for t in range(len(X)):
        R[t, t] += hp.sigma2 / reps[t] + extra
    return R


def _exact(M):
    return [[Fraction(float(v)) for v in row] for row in np.atleast_2d(M)]


def solve_exact(A, B):
    """``A^-1 B`` by Gauss-Jordan elimination in exact rational arithmetic."""
    n = len(A)
    M = [list(A[i]) + list(B[i]) for i in range(n)]
    for c in range(n):
        piv = next(r for r in range(c, n) if M[r][c] != 0)
        M[c], M[piv] = M[piv], M[c]
        inv = 1 / M[c][c]
        M[c] = [v * inv for v in M[c]]
        for r in range(n):
            if r != c and M[r][c] != 0:
                f = M[r][c]
                M[r] = [a - f * b for a, b in zip(M[r], M[c])]
    return [row[n:] for row in M]


def conditional_exact(spec, hp, S, d: Dataset, j, X0):
    """Mean and variance of the latent response at ``X0`` given output ``j``.

    Builds the joint Gaussian of (latent targets, sample means) entry by entry
    and conditions it in exact rational arithmetic on the float-valued
    covariance entries, so the only error left is in forming those entries.
    """
    X = np.asarray(d.design)
    X0 = np.atleast_2d(X0)
    K00 = _exact(latent_cov(spec, hp, X0, X0))
    K0t = _exact(latent_cov(spec, hp, X0, X))
    Ktt = observed_cov(spec, hp, S, X, d.replications)
    # the dot products inside the linear term are formed exactly too
    if spec.variant.value == "surrogate":
        phi2 = Fraction(hp.phi2 or 0.0)
        dot = lambda a, b: sum(Fraction(float(u)) * Fraction(float(v)) for u, v in zip(a, b))
        K00 = _exact(latent_cov(spec, hp.with_phi2(0.0), X0, X0))
        K0t = _exact(latent_cov(spec, hp.with_phi2(0.0), X0, X))
        Kz = _exact(observed_cov(spec, hp.with_phi2(0.0), S, X, d.replications))
        K00 = [[K00[a][b] + phi2 * dot(X0[a], X0[b]) for b in range(len(X0))] for a in range(len(X0))]
        K0t = [[K0t[a][t] + phi2 * dot(X0[a], X[t]) for t in range(len(X))] for a in range(len(X0))]
        Ktt = [[Kz[s][t] + phi2 * dot(X[s], X[t]) for t in range(len(X))] for s in range(len(X))]
    else:
        Ktt = _exact(Ktt)
    Sx = [Fraction(float(v)) for v in S]
    resid = [[Fraction(float(d.sample_means[t, j])) - sum(Fraction(float(X[t, c])) * Sx[c] for c in range(len(Sx)))]
             for t in range(len(X))]
    A = solve_exact(Ktt, resid)
    B = solve_exact(Ktt, [list(col) for col in zip(*K0t)])  # Ktt^-1 Kt0
    mu, var = [], []
    for a in range(len(X0)):
        prior = sum(Fraction(float(X0[a, c])) * Sx[c] for c in range(len(Sx)))
        mu.append(float(prior + sum(K0t[a][t] * A[t][0] for t in range(len(X)))))
        var.append(float(K00[a][a] - sum(K0t[a][t] * B[t][a] for t in range(len(X)))))
    return np.array(mu), np.array(var)


def mvn_logpdf(r, R):
    k = len(r)
    return float(-0.5 * k * math.log(2 * math.pi) - 0.5 * math.log(np.linalg.det(R)) - 0.5 * r @ np.linalg.inv(R) @ r)


def gls_explicit(F, R, y):
    Ri = np.linalg.inv(R)
    return np.linalg.inv(F.T @ Ri @ F) @ (F.T @ Ri @ y)


def det_cofactor(M):
    """Determinant by cofactor expansion along the first row."""
    M = [list(map(float, row)) for row in M]
    n = len(M)
    if n == 1:
        return M[0][0]
    total = 0.0
    for c in range(n):
        minor = [row[:c] + row[c + 1 :] for row in M[1:]]
        total += (-1) ** c * M[0][c] * det_cofactor(minor)
    return total


def fisher_explicit(F, R, dR, resid):
    """Information matrix with every inverse formed explicitly."""
    Ri = np.linalg.inv(R)
    A = F.T @ Ri @ F
    Ai = np.linalg.inv(A)
    P = len(dR)
    dS = [-Ai @ (F.T @ Ri @ dR[a] @ Ri @ resid) for a in range(P)]
    out = np.zeros((P, P))
    for a in range(P):
        for b in range(P):
            out[a, b] = dS[a] @ A @ dS[b] + 0.5 * np.trace(Ri @ dR[a] @ Ri @ dR[b])
    return out


def random_instance(rng, variant="kriging", k=5, q=2, p=1, bounds=None, noise=True, reps=None):
    """Random spec, dataset, hyperparameters and coefficients for small checks."""
    lo, hi = (-1.0, 1.0) if bounds is None else bounds
    b = np.array([[lo, hi]] * q)
    X = rng.uniform(lo, hi, size=(k, q))
    reps = rng.integers(1, 4, size=k) if reps is None else np.broadcast_to(reps, (k,))
    responses = [rng.normal(size=(int(n), p)) for n in reps]
    d = Dataset.from_responses(X, responses, b)
    surrogate = variant == "surrogate"
    A = rng.normal(size=(q, q))
    spec = ModelSpec(
        variant, q, p,
        sigma_F=0.05 * A @ A.T if surrogate else None,
        bounds=b if bounds is not None else None,
    )
    hps = [
        Hyperparameters(
            tau2=float(rng.uniform(0.5, 2.0)),
            theta=rng.uniform(0.2, 3.0, size=q),
            sigma2=float(rng.uniform(0.05, 0.5)) if noise else 0.0,
            phi2=float(rng.uniform(0.05, 0.5)) if surrogate else None,
        )
        for _ in range(p)
    ]
    S = [rng.normal(size=q) for _ in range(p)]
    return spec, d, hps, S
