"""Centered multivariate normal probabilities over symmetric boxes.

``symmetric_rectangle_probability`` estimates ``P(-z <= X_k <= z for all k)``
for ``X ~ N(0, omega)`` with Genz's separation-of-variables transform: a
Cholesky factor computed with variable prioritization (narrowest expected
conditional interval first) turns the integral into one over the unit cube,
which is integrated with randomly shifted, tent-periodized rank-1 lattice
points and antithetic pairs.  The spread of the per-shift means gives the
error estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from progfs.errors import ArgumentError, NumericError

__all__ = [
    "CorrelationMatrix",
    "MvnEstimate",
    "standard_normal_cdf",
    "standard_normal_quantile",
    "symmetric_rectangle_probability",
]

DEFAULT_ACCURACY = 1e-4
DEFAULT_RANDOMIZATIONS = 12
MAX_POINTS = 2**22
PSD_TOLERANCE = 1e-10
EIGEN_FLOOR = 1e-10
MAX_DIM = 50

_INITIAL_POINTS = 128
_CHUNK = 1 << 15


def standard_normal_cdf(x):
    """Phi(x); accepts scalars or arrays."""
    out = special.ndtr(x)
    return float(out) if np.ndim(out) == 0 else out


def standard_normal_quantile(u):
    """Inverse of ``standard_normal_cdf`` on the open unit interval."""
    arr = np.asarray(u, dtype=float)
    if not ((arr > 0) & (arr < 1)).all():
        raise ArgumentError(f"quantile argument must lie in (0, 1), got {u!r}")
    out = special.ndtri(arr)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """Validated correlation matrix.

    Matrices with eigenvalues below ``EIGEN_FLOOR`` (but not below
    ``-PSD_TOLERANCE``) are repaired: eigenvalues are floored, the matrix is
    rescaled to a unit diagonal and ``near_singular`` is set.
    """

    entries: np.ndarray
    near_singular: bool = False

    def __post_init__(self):
        m = np.array(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ArgumentError(f"correlation matrix must be square, got shape {m.shape}")
        if m.shape[0] == 0:
            raise ArgumentError("correlation matrix has dimension 0")
        if not np.isfinite(m).all():
            raise NumericError("correlation matrix has non-finite entries")
        if np.abs(m - m.T).max() > 1e-12:
            raise ArgumentError("correlation matrix is not symmetric")
        if np.abs(np.diag(m) - 1.0).max() > 1e-12:
            raise ArgumentError("correlation matrix must have a unit diagonal")
        if np.abs(m).max() > 1.0 + 1e-12:
            raise ArgumentError("correlations must lie in [-1, 1]")
        m = np.clip((m + m.T) / 2.0, -1.0, 1.0)
        np.fill_diagonal(m, 1.0)
        near = bool(self.near_singular)
        if m.shape[0] > 1:
            vals, vecs = np.linalg.eigh(m)
            if vals[0] < -PSD_TOLERANCE:
                raise NumericError(
                    f"correlation matrix is not positive semi-definite (min eigenvalue {vals[0]:.3g})"
                )
            if vals[0] < EIGEN_FLOOR:
                near = True
                m = (vecs * np.maximum(vals, EIGEN_FLOOR)) @ vecs.T
                scale = 1.0 / np.sqrt(np.diag(m))
                m = m * scale[:, None] * scale[None, :]
                m = (m + m.T) / 2.0
                np.fill_diagonal(m, 1.0)
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)
        object.__setattr__(self, "near_singular", near)

    @classmethod
    def from_covariance(cls, sigma) -> "CorrelationMatrix":
        sigma = np.asarray(sigma, dtype=float)
        d = np.sqrt(np.diag(sigma))
        if (d <= 0).any():
            raise NumericError("covariance has a zero or negative variance")
        omega = sigma / d[:, None] / d[None, :]
        omega = np.clip((omega + omega.T) / 2.0, -1.0, 1.0)
        np.fill_diagonal(omega, 1.0)
        return cls(omega)

    @property
    def dim(self) -> int:
        return int(self.entries.shape[0])


@dataclass(frozen=True)
class MvnEstimate:
    value: float
    error_estimate: float
    samples_used: int
    converged: bool = True
    near_singular: bool = False


def _primes(count: int) -> list[int]:
    out: list[int] = []
    k = 2
    while len(out) < count:
        if all(k % p for p in out if p * p <= k):
            out.append(k)
        k += 1
    return out


_GENERATOR = np.array([math.sqrt(p) % 1.0 for p in _primes(MAX_DIM)])


def _truncated_mean(lo: float, hi: float) -> float:
    mass = special.ndtr(hi) - special.ndtr(lo)
    if mass < 1e-300:
        # interval lies far in a tail; its nearer endpoint is a good proxy
        return lo if abs(lo) < abs(hi) else hi
    pdf = lambda x: 0.0 if math.isinf(x) else math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)  # noqa: E731
    return (pdf(lo) - pdf(hi)) / mass


def _prioritized_cholesky(omega: np.ndarray, z: float) -> tuple[np.ndarray, np.ndarray]:
    """Lower Cholesky factor of a permutation of ``omega``.

    At each step the remaining variable with the smallest conditional
    probability of landing in ``[-z, z]`` (given expected values of the
    variables already placed) is moved next.
    """
    p = omega.shape[0]
    cov = omega.copy()
    chol = np.zeros((p, p))
    order = np.arange(p)
    y = np.zeros(p)
    for i in range(p):
        best, best_prob, best_bounds = i, math.inf, (0.0, 0.0)
        for j in range(i, p):
            var = cov[j, j] - chol[j, :i] @ chol[j, :i]
            if var < -PSD_TOLERANCE:
                raise NumericError("matrix is not positive semi-definite")
            sd = math.sqrt(max(var, 1e-300))
            mu = chol[j, :i] @ y[:i]
            lo, hi = (-z - mu) / sd, (z - mu) / sd
            prob = special.ndtr(hi) - special.ndtr(lo)
            if prob < best_prob:
                best, best_prob, best_bounds = j, prob, (lo, hi)
        if best != i:
            cov[[i, best], :] = cov[[best, i], :]
            cov[:, [i, best]] = cov[:, [best, i]]
            chol[[i, best], :] = chol[[best, i], :]
            order[[i, best]] = order[[best, i]]
        var = cov[i, i] - chol[i, :i] @ chol[i, :i]
        chol[i, i] = math.sqrt(max(var, 1e-300))
        for r in range(i + 1, p):
            chol[r, i] = (cov[r, i] - chol[r, :i] @ chol[i, :i]) / chol[i, i]
        y[i] = _truncated_mean(*best_bounds)
    return chol, order


def _integrand(chol: np.ndarray, z: float, w: np.ndarray) -> np.ndarray:
    """Genz transformed integrand at points ``w`` of shape (n, p - 1)."""
    p = chol.shape[0]
    n = w.shape[0]
    ys = np.empty((n, p - 1))
    first = special.ndtr(z / chol[0, 0]) - special.ndtr(-z / chol[0, 0])
    lo0 = special.ndtr(-z / chol[0, 0])
    f = np.full(n, first)
    d = np.full(n, lo0)
    e = np.full(n, first)
    for i in range(1, p):
        u = np.clip(d + w[:, i - 1] * e, 1e-16, 1 - 1e-16)
        ys[:, i - 1] = special.ndtri(u)
        shift = ys[:, :i] @ chol[i, :i]
        d = special.ndtr((-z - shift) / chol[i, i])
        e = special.ndtr((z - shift) / chol[i, i]) - d
        f *= e
    return f


def symmetric_rectangle_probability(
    omega,
    z: float,
    accuracy: float = DEFAULT_ACCURACY,
    seed: int = 0,
    randomizations: int = DEFAULT_RANDOMIZATIONS,
    max_points: int = MAX_POINTS,
    decision_threshold: float | None = None,
) -> MvnEstimate:
    """Estimate ``P(|X_k| <= z, k = 1..p)`` for ``X ~ N(0, omega)``.

    The lattice grows by doubling (continuing the same Kronecker sequence per
    shift) until three standard errors across ``randomizations`` shifts fall
    below ``accuracy`` or ``max_points`` evaluations have been spent, in which
    case the estimate is returned with ``converged=False``.

    With ``decision_threshold`` set, refinement also stops once the estimate
    is further than its error estimate from that value; callers that only
    compare the probability against a cutoff use this to skip work.
    """
    if not isinstance(omega, CorrelationMatrix):
        omega = CorrelationMatrix(np.asarray(omega, dtype=float))
    if not z >= 0 or not math.isfinite(z):
        raise ArgumentError(f"z must be finite and >= 0, got {z}")
    if not accuracy > 0:
        raise ArgumentError(f"accuracy must be > 0, got {accuracy}")
    if randomizations < 2:
        raise ArgumentError("need at least two randomizations for an error estimate")
    p = omega.dim
    if p > MAX_DIM:
        raise ArgumentError(f"dimension {p} exceeds the supported maximum {MAX_DIM}")
    near = omega.near_singular
    if z == 0.0:
        return MvnEstimate(0.0, 0.0, 0, True, near)
    if p == 1:
        return MvnEstimate(float(1.0 - 2.0 * special.ndtr(-z)), 0.0, 1, True, near)

    chol, _ = _prioritized_cholesky(omega.entries, z)
    gen = _GENERATOR[: p - 1]
    shifts = np.stack(
        [np.random.default_rng([seed, r]).random(p - 1) for r in range(randomizations)]
    )
    sums = np.zeros(randomizations)
    done = 0  # lattice indices consumed per shift
    per_point = 2 * randomizations  # antithetic pair per shift
    block = max(1, min(_INITIAL_POINTS, max_points // per_point))
    used = 0
    while True:
        k = np.arange(done + 1, done + block + 1, dtype=float)[:, None]
        base = (k * gen[None, :]) % 1.0
        step = max(1, _CHUNK // block)
        for r0 in range(0, randomizations, step):
            rs = shifts[r0 : r0 + step]
            x = (base[None, :, :] + rs[:, None, :]) % 1.0
            w = np.abs(2.0 * x - 1.0).reshape(-1, p - 1)
            vals = _integrand(chol, z, w) + _integrand(chol, z, 1.0 - w)
            sums[r0 : r0 + step] += 0.5 * vals.reshape(len(rs), block).sum(axis=1)
        done += block
        used += per_point * block
        means = sums / done
        value = float(means.mean())
        error = float(3.0 * means.std(ddof=1) / math.sqrt(randomizations))
        value = min(max(value, 0.0), 1.0)
        if error <= accuracy:
            return MvnEstimate(value, error, used, True, near)
        if decision_threshold is not None and abs(value - decision_threshold) > error:
            return MvnEstimate(value, error, used, True, near)
        block = min(done, (max_points - used) // per_point)
        if block < 1:
            return MvnEstimate(value, error, used, False, near)
