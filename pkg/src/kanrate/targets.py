"""Synthetic regression targets of known Sobolev smoothness, sampling and CSV I/O."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class TargetKind(str, enum.Enum):
    PIECEWISE_POLY = "piecewise-poly"
    FOURIER = "fourier"


@dataclass(frozen=True)
class TargetSpec:
    kind: TargetKind = TargetKind.PIECEWISE_POLY
    r: int = 2
    d: int = 5
    fourier_truncation: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "kind", TargetKind(self.kind))
        if self.r < 1:
            raise ValueError("smoothness r must be >= 1")
        if self.d < 1:
            raise ValueError("dimension d must be >= 1")
        if self.kind is TargetKind.FOURIER and self.d != 1:
            raise ValueError("the Fourier target is univariate (d = 1)")
        if self.fourier_truncation < 1:
            raise ValueError("fourier_truncation must be >= 1")

    def __call__(self, X) -> np.ndarray:
        """Noiseless target values at the rows of ``X`` (shape ``(n, d)``)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ValueError(f"expected inputs of shape (n, {self.d}), got {X.shape}")
        if self.kind is TargetKind.FOURIER:
            return eval_target_fourier(X[:, 0], self.r, self.fourier_truncation)
        return eval_target_poly(X, self.r)


@dataclass(frozen=True)
class GenConfig:
    n: int
    sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not self.sigma >= 0:
            raise ValueError("sigma must be >= 0")


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    noise_sigma: float | None = None

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        Y = np.array(self.Y, dtype=np.float64).ravel()
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError("X must be a non-empty (n, d) matrix")
        if Y.shape != (X.shape[0],):
            raise ValueError(f"Y has {Y.size} entries but X has {X.shape[0]} rows")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("dataset contains non-finite values")
        if np.any(X < 0) or np.any(X > 1):
            raise ValueError("all inputs must lie in [0, 1]")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def _check_unit(t):
    t = np.asarray(t, dtype=np.float64)
    if np.any(~np.isfinite(t)) or np.any(t < 0) or np.any(t > 1):
        raise ValueError("argument must lie in [0, 1]")
    return t


def eval_psi_piecewise(t, r: int):
    """``t^(r+1)`` on [0, 1/2) and ``(1-t)^(r+1)`` on [1/2, 1]."""
    ta = _check_unit(t)
    out = np.where(ta < 0.5, ta, 1.0 - ta) ** (r + 1)
    return float(out) if out.ndim == 0 else out


def eval_target_poly(x, r: int):
    """``sin(pi * sum_j psi(x_j))``; accepts one point or an ``(n, d)`` matrix."""
    xa = _check_unit(x)
    s = np.sum(eval_psi_piecewise(xa, r), axis=-1)
    out = np.sin(np.pi * s)
    return float(out) if np.ndim(out) == 0 else out


def fourier_coefficient(k, r: int):
    """``1 / (k^(r + 1/2) * ln(k + 1))``."""
    ka = np.asarray(k)
    if np.any(ka < 1):
        raise ValueError("Fourier index k must be >= 1")
    ka = ka.astype(np.float64)
    out = 1.0 / (ka ** (r + 0.5) * np.log1p(ka))
    return float(out) if out.ndim == 0 else out


def _sine_sum(x: np.ndarray, a: np.ndarray) -> np.ndarray:
    k = np.arange(1, a.size + 1, dtype=np.float64)
    out = np.empty_like(x)
    # chunked to bound memory at large n
    step = max(1, 2_000_000 // a.size)
    for s in range(0, x.size, step):
        out[s: s + step] = np.sin(2.0 * np.pi * np.outer(x[s: s + step], k)) @ a
    return out


def eval_target_fourier(x, r: int, truncation: int = 1000):
    """Partial sum ``sum_{k<=truncation} a_k sin(2 pi k x)``.

    Points above 1/2 are reflected, ``f(x) = -f(1 - x)``, so the computed sum
    keeps the exact odd symmetry about 1/2 of the series. Points in (1/4, 1/2]
    use ``sin(2 pi k x) = (-1)^(k+1) sin(2 pi k (1/2 - x))``, which makes the
    zero at 1/2 exact.
    """
    xa = _check_unit(x)
    flat = np.atleast_1d(xa).ravel()
    a = np.atleast_1d(fourier_coefficient(np.arange(1, truncation + 1), r))
    upper = flat > 0.5
    ref = np.where(upper, 1.0 - flat, flat)
    mid = ref > 0.25
    out = np.empty_like(ref)
    out[~mid] = _sine_sum(ref[~mid], a)
    alt = a.copy()
    alt[1::2] *= -1.0
    out[mid] = _sine_sum(0.5 - ref[mid], alt)
    out = np.where(upper, -out, out)
    return float(out[0]) if xa.ndim == 0 else out.reshape(xa.shape)


def fourier_tail_bound(r: int, truncation: int, horizon: int | None = None) -> float:
    """``sum_{truncation < k <= horizon} a_k`` (horizon defaults to 10 x truncation)."""
    horizon = 10 * truncation if horizon is None else horizon
    return float(np.sum(fourier_coefficient(np.arange(truncation + 1, horizon + 1), r)))


def sample_inputs(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    return rng.random((n, d))


def generate(spec: TargetSpec, cfg: GenConfig) -> Dataset:
    """``n`` uniform inputs on [0,1]^d with responses ``f(X) + N(0, sigma^2)``."""
    rng = np.random.default_rng(cfg.seed)
    X = sample_inputs(rng, cfg.n, spec.d)
    noise = rng.standard_normal(cfg.n)
    Y = spec(X)
    if cfg.sigma > 0:
        Y = Y + cfg.sigma * noise
    return Dataset(X, Y, noise_sigma=cfg.sigma)


class DatasetFormatError(ValueError):
    pass


def write_dataset(path, data: Dataset) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j + 1}" for j in range(data.d)] + ["y"])
        for xi, yi in zip(data.X, data.Y):
            w.writerow([f"{v:.17g}" for v in xi] + [f"{yi:.17g}"])


def read_dataset(path) -> Dataset:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        d = len(header) - 1
        if d < 1 or header[-1] != "y" or header[:-1] != [f"x{j + 1}" for j in range(d)]:
            raise DatasetFormatError(f"{path}: header must be x1,...,xd,y; got {','.join(header)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise DatasetFormatError(
                    f"{path}: row {lineno} has {len(row)} columns, expected {d + 1}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DatasetFormatError(f"{path}: row {lineno}: {exc}") from None
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")
    arr = np.asarray(rows)
    try:
        return Dataset(arr[:, :d], arr[:, d])
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None
