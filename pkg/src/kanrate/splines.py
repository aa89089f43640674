"""Clamped uniform B-spline bases, evaluation and least-squares fitting on [0, 1].

The basis is evaluated with the plain Cox--de Boor recursion (0/0 taken as 0)
and compressed to a banded design matrix with ``degree + 1`` nonzeros per row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded

FALLBACK_RIDGE = 1e-8
# relative pivot below which the normal system is treated as rank deficient
_PIVOT_RTOL = 1e-13


class SplineDomainError(ValueError):
    """Evaluation point outside [0, 1]."""


class UnsupportedDegreeError(ValueError):
    pass


@dataclass(frozen=True)
class KnotVector:
    """Clamped knot sequence with ``interior_count`` uniform interior knots."""

    degree: int
    interior_count: int
    knots: np.ndarray = field(repr=False)

    def __post_init__(self):
        p, K = self.degree, self.interior_count
        t = np.asarray(self.knots, dtype=np.float64)
        if p < 0 or K < 0:
            raise ValueError("degree and interior_count must be non-negative")
        if t.shape != (K + 2 * (p + 1),):
            raise ValueError(f"expected {K + 2 * (p + 1)} knots, got {t.shape}")
        if np.any(np.diff(t) < 0):
            raise ValueError("knots must be non-decreasing")
        if np.any(t[: p + 1] != 0.0) or np.any(t[-(p + 1):] != 1.0):
            raise ValueError("boundary knots must be clamped at 0 and 1")
        interior = t[p + 1: p + 1 + K]
        if K and (interior[0] <= 0.0 or interior[-1] >= 1.0 or np.any(np.diff(interior) <= 0)):
            raise ValueError("interior knots must be strictly increasing inside (0, 1)")
        t.setflags(write=False)
        object.__setattr__(self, "knots", t)

    @property
    def dim(self) -> int:
        return self.interior_count + self.degree + 1

    def __eq__(self, other):
        if not isinstance(other, KnotVector):
            return NotImplemented
        return (self.degree == other.degree and self.interior_count == other.interior_count
                and np.array_equal(self.knots, other.knots))

    def __hash__(self):
        return hash((self.degree, self.interior_count))


def build_clamped_knots(interior_count: int, degree: int) -> KnotVector:
    """Uniform interior knots ``i / (K + 1)`` with (p+1)-fold boundary knots."""
    K, p = int(interior_count), int(degree)
    interior = np.arange(1, K + 1, dtype=np.float64) / (K + 1)
    knots = np.concatenate([np.zeros(p + 1), interior, np.ones(p + 1)])
    return KnotVector(p, K, knots)


def _check_domain(x):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
        bad = x[~((x >= 0.0) & (x <= 1.0))]
        raise SplineDomainError(f"evaluation points must lie in [0, 1]; got e.g. {bad.ravel()[:3]}")
    return x


def _cox_de_boor(t: np.ndarray, p: int, x: np.ndarray, left: bool = False) -> np.ndarray:
    """Full basis matrix, shape (len(x), len(t) - p - 1), by the Cox--de Boor recursion.

    ``left=True`` uses intervals (t_i, t_{i+1}] instead, giving left limits at knots.
    """
    n_int = len(t) - 1
    xc = x[:, None]
    lo, hi = t[:-1][None, :], t[1:][None, :]
    if left:
        B = ((lo < xc) & (xc <= hi)).astype(np.float64)
        # closure at the left end of the domain
        first = np.flatnonzero(t[:-1] < t[1:])[0]
        B[x == t[0], first] = 1.0
    else:
        B = ((lo <= xc) & (xc < hi)).astype(np.float64)
        last = np.flatnonzero(t[:-1] < t[1:])[-1]
        B[x == t[-1], last] = 1.0
    for k in range(1, p + 1):
        m = n_int - k
        d1 = t[k: k + m] - t[:m]
        d2 = t[k + 1: k + 1 + m] - t[1: 1 + m]
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(d1 > 0, (xc - t[:m]) / d1, 0.0)
            b = np.where(d2 > 0, (t[k + 1: k + 1 + m] - xc) / d2, 0.0)
        B = a * B[:, :m] + b * B[:, 1: m + 1]
    return B


def eval_basis(knots: KnotVector, x):
    """All ``K + p + 1`` basis values at ``x``.

    Scalar ``x`` gives a vector; an array of points gives a ``(n, dim)`` matrix.
    """
    xa = _check_domain(x)
    B = _cox_de_boor(knots.knots, knots.degree, np.atleast_1d(xa).ravel())
    return B[0] if xa.ndim == 0 else B


@dataclass(frozen=True)
class DesignMatrix:
    """Banded storage of basis values at sample sites.

    Row ``i`` holds ``values[i, k] = B_{start[i] + k}(x_i)`` for ``k = 0..p``.
    """

    values: np.ndarray
    start: np.ndarray
    dim: int

    @property
    def shape(self):
        return (self.values.shape[0], self.dim)

    @property
    def bandwidth(self) -> int:
        return self.values.shape[1]

    def toarray(self) -> np.ndarray:
        n, w = self.values.shape
        out = np.zeros((n, self.dim))
        rows = np.repeat(np.arange(n), w)
        out[rows, (self.start[:, None] + np.arange(w)).ravel()] = self.values.ravel()
        return out

    def matvec(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=np.float64)
        out = self.values[:, 0] * c[self.start]
        for k in range(1, self.bandwidth):
            out += self.values[:, k] * c[self.start + k]
        return out


def _local_basis(t: np.ndarray, p: int, x: np.ndarray, span: np.ndarray) -> np.ndarray:
    """The ``p + 1`` basis functions that can be nonzero on each point's knot span.

    Same recursion as ``_cox_de_boor`` restricted to the active functions; all
    denominators are positive because every span is a non-empty interval.
    """
    n = x.size
    N = [np.ones(n)] + [None] * p
    left = [None] * (p + 1)
    right = [None] * (p + 1)
    for j in range(1, p + 1):
        left[j] = x - t[span + 1 - j]
        right[j] = t[span + j] - x
        saved = np.zeros(n)
        for r in range(j):
            temp = N[r] / (right[r + 1] + left[j - r])
            N[r] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        N[j] = saved
    return np.stack(N, axis=1)


def design_matrix(knots: KnotVector, xs) -> DesignMatrix:
    xs = _check_domain(np.atleast_1d(xs).ravel())
    p, dim, t = knots.degree, knots.dim, knots.knots
    # uniform interior knots: guess the span arithmetically, then correct rounding
    span = p + np.floor(xs * (knots.interior_count + 1)).astype(np.intp)
    # x = 1 belongs to the last non-empty span
    span = np.clip(span, p, dim - 1)
    span -= (t[span] > xs) & (span > p)
    span += (t[np.minimum(span + 1, dim)] <= xs) & (span < dim - 1)
    return DesignMatrix(_local_basis(knots.knots, p, xs, span), span - p, dim)


@dataclass(frozen=True)
class SplineFunction:
    basis: KnotVector
    coefficients: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=np.float64)
        if c.shape != (self.basis.dim,):
            raise ValueError(f"expected {self.basis.dim} coefficients, got shape {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @property
    def degree(self) -> int:
        return self.basis.degree

    def __call__(self, x):
        return eval_spline(self, x)

    def with_coefficients(self, coefficients) -> SplineFunction:
        return SplineFunction(self.basis, coefficients)


def eval_spline(f: SplineFunction, x):
    xa = _check_domain(x)
    dm = design_matrix(f.basis, np.atleast_1d(xa).ravel())
    y = dm.matvec(f.coefficients)
    return float(y[0]) if xa.ndim == 0 else y.reshape(xa.shape)


def derivative_spline(f: SplineFunction) -> SplineFunction:
    """Derivative as a spline of degree ``p - 1`` on the knot vector with one
    boundary knot dropped at each end."""
    p = f.degree
    if p == 0:
        raise UnsupportedDegreeError("derivative of a degree-0 spline is not supported")
    t, c = f.basis.knots, f.coefficients
    denom = t[p + 1: p + 1 + len(c) - 1] - t[1: len(c)]
    dc = np.where(denom > 0, p * np.diff(c) / np.where(denom > 0, denom, 1.0), 0.0)
    return SplineFunction(build_clamped_knots(f.basis.interior_count, p - 1), dc)


def eval_spline_derivative(f: SplineFunction, x):
    """Exact first derivative; right limit at interior knots, left limit at 1."""
    return eval_spline(derivative_spline(f), x)


def eval_spline_left(f: SplineFunction, x) -> np.ndarray:
    """Left limits of the spline at ``x`` (differs from ``eval_spline`` only at knots)."""
    xs = np.atleast_1d(_check_domain(x)).ravel()
    return _cox_de_boor(f.basis.knots, f.degree, xs, left=True) @ f.coefficients


def normal_equations(dm: DesignMatrix, ys, weights=None):
    """Lower banded form of ``B^T W B`` and the vector ``B^T W y``."""
    n, w = dm.values.shape
    ys = np.asarray(ys, dtype=np.float64)
    wt = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    ab = np.zeros((w, dm.dim))
    rhs = np.zeros(dm.dim)
    for a in range(w):
        col = dm.start + a
        wa = wt * dm.values[:, a]
        rhs += np.bincount(col, weights=wa * ys, minlength=dm.dim)
        for b in range(a, w):
            ab[b - a] += np.bincount(col, weights=wa * dm.values[:, b], minlength=dm.dim)
    return ab, rhs


def solve_banded_spd(ab: np.ndarray, rhs: np.ndarray, ridge: float):
    """Solve ``(A + ridge I) c = rhs`` for banded SPD ``A`` in lower storage.

    Returns ``(c, fallback)``; ``fallback`` is True when ``ridge`` was zero but
    the system was found rank deficient and ``FALLBACK_RIDGE`` was used.
    """
    def attempt(lam):
        m = ab.copy()
        m[0] += lam
        try:
            L = cholesky_banded(m, lower=True)
        except LinAlgError:
            return None
        piv = L[0] ** 2
        scale = max(np.max(m[0]), np.finfo(float).tiny)
        if lam == 0.0 and np.min(piv) <= _PIVOT_RTOL * scale:
            return None
        return cho_solve_banded((L, True), rhs)

    c = attempt(float(ridge))
    if c is not None:
        return c, False
    c = attempt(max(float(ridge), FALLBACK_RIDGE))
    if c is None:
        raise LinAlgError("normal system is not positive definite even after regularization")
    return c, ridge < FALLBACK_RIDGE


def solve_spline_ls(xs, ys, knots: KnotVector, weights=None, ridge: float = 0.0,
                    design: DesignMatrix | None = None):
    """Coefficients of the weighted ridge least-squares spline fit and a fallback flag."""
    xs = np.atleast_1d(np.asarray(xs, dtype=np.float64)).ravel()
    ys = np.atleast_1d(np.asarray(ys, dtype=np.float64)).ravel()
    if xs.size == 0:
        raise ValueError("cannot fit a spline to empty data")
    if xs.shape != ys.shape:
        raise ValueError(f"xs and ys differ in length ({xs.size} vs {ys.size})")
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64).ravel()
        if weights.shape != xs.shape:
            raise ValueError("weights must match data length")
        if np.any(weights < 0):
            raise ValueError("weights must be non-negative")
    if not (np.all(np.isfinite(ys)) and np.all(np.isfinite(xs))
            and (weights is None or np.all(np.isfinite(weights)))):
        raise ValueError("non-finite values in spline fit inputs")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    dm = design if design is not None else design_matrix(knots, xs)
    ab, rhs = normal_equations(dm, ys, weights)
    return solve_banded_spd(ab, rhs, ridge)


def fit_spline_ls(xs, ys, knots: KnotVector, weights=None, ridge: float = 0.0) -> SplineFunction:
    """Minimize ``sum w_i (y_i - f(x_i))^2 + ridge * ||c||^2`` over the spline space."""
    c, _ = solve_spline_ls(xs, ys, knots, weights, ridge)
    return SplineFunction(knots, c)


def knot_count_rule(n: int, r: int, c: float = 1.0) -> int:
    """Interior knot count ``max(1, round(c * n ** (1 / (2r + 1))))``."""
    if n < 1 or r < 1 or not c > 0:
        raise ValueError("need n >= 1, r >= 1 and c > 0")
    k = c * n ** (1.0 / (2 * r + 1))
    # guard against 100000 ** 0.2 == 10.000000000000002 style rounding noise
    k = round(k, 9)
    return max(1, int(math.floor(k + 0.5)))
