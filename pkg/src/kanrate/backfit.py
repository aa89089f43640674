"""Least-squares backfitting for KAN models.

Each sweep visits the nodes in order. For node ``q`` the partial residual
``R_q`` (response minus all other nodes) is regressed on the normalized
aggregate to refit the outer spline, then every inner spline is refit by a
weighted univariate least-squares problem obtained from a Gauss--Newton
linearization of ``g_q(N_q(T_q(x)))`` in that inner spline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import lstsq

from .model import AggregationKind, KanModel, KanNode, Normalizer, node_transform
from .splines import (
    SplineFunction,
    derivative_spline,
    design_matrix,
    solve_spline_ls,
)
from .targets import Dataset

log = logging.getLogger(__name__)

# step fractions tried when a Gauss-Newton inner step would raise the loss
_STEP_SCHEDULE = tuple(0.5 ** k for k in range(9))
JOINT_RCOND = 1e-6


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    max_sweeps: int = 50
    tol: float = 1e-6
    ridge: float = 0.0
    deriv_floor: float = 1e-3
    inner_knot_count: int | None = None
    outer_knot_count: int | None = None
    degree: int = 3
    seed: int = 0
    normalizer_pad: float = 0.05
    # keep the model's normalizers as given instead of refreshing them each sweep
    freeze_normalizers: bool = False
    update_outer: bool = True
    # after each sweep, refit all outer splines together (the limit of node-wise backfitting)
    joint_outer: bool = False

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if self.tol < 0 or self.ridge < 0 or not self.deriv_floor > 0:
            raise ValueError("need tol >= 0, ridge >= 0 and deriv_floor > 0")
        if self.degree < 1:
            raise ValueError("degree must be >= 1 (inner updates need outer derivatives)")
        for name in ("inner_knot_count", "outer_knot_count"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class FitTrace:
    mse: list[float] = field(default_factory=list)
    initial_mse: float = float("nan")
    sweeps: int = 0
    converged: bool = False
    ridge_fallbacks: int = 0
    skipped_updates: int = 0
    rejected_steps: int = 0
    monotonicity_violations: int = 0


def training_mse(model: KanModel, data: Dataset) -> float:
    if data.n == 0:
        raise ValueError("empty dataset")
    resid = data.Y - model(data.X)
    return float(np.mean(resid * resid))


def partial_residual(model: KanModel, data: Dataset, q: int) -> np.ndarray:
    """``Y`` minus the outputs of every node except ``q``."""
    if not 0 <= q < model.Q:
        raise IndexError(f"node index {q} out of range for Q={model.Q}")
    R = np.array(data.Y, dtype=np.float64)
    for k, node in enumerate(model.nodes):
        if k != q:
            R -= node.outer(node.normalizer(node.aggregate(node.inner_values(data.X))))
    return R


def refresh_normalizers(model: KanModel, X, pad: float = 0.05) -> KanModel:
    """Reset every node's normalizer to the padded range of its aggregate on ``X``."""
    nodes = tuple(replace(node, normalizer=Normalizer.fit(node_transform(node, X), pad))
                  for node in model.nodes)
    return replace(model, nodes=nodes)


def _signed_floor(v: np.ndarray, floor: float) -> np.ndarray:
    sign = np.where(v < 0, -1.0, 1.0)
    return sign * np.maximum(np.abs(v), floor)


def _gauss_newton_problem(node: KanNode, psi_raw: np.ndarray, j: int, R: np.ndarray,
                          deriv_floor: float):
    """Weights and pseudo-responses of the linearized problem for inner spline ``j``.

    ``psi_raw`` holds the unclamped inner values, shape ``(d, n)``.
    """
    vals = psi_raw
    if node.kind is AggregationKind.MULTIPLICATIVE:
        vals = np.clip(psi_raw, -node.output_bound, node.output_bound)
        a = np.prod(np.delete(vals, j, axis=0), axis=0) if node.d > 1 else np.ones(psi_raw.shape[1])
    else:
        a = np.ones(psi_raw.shape[1])
    T = node.aggregate(vals)
    v = node.normalizer(T)
    fitted = node.outer(v)
    s = derivative_spline(node.outer)(v) / node.normalizer.width
    sa = s * a
    w = np.maximum(sa * sa, deriv_floor ** 2)
    z = psi_raw[j] + (R - fitted) / _signed_floor(sa, deriv_floor)
    return w, z


def inner_update(node: KanNode, data: Dataset, R_q, j: int, cfg: TrainConfig) -> SplineFunction:
    """One Gauss--Newton coordinate step for inner spline ``j`` of ``node``."""
    if not 0 <= j < node.d:
        raise IndexError(f"inner index {j} out of range for d={node.d}")
    psi_raw = np.stack([psi(data.X[:, l]) for l, psi in enumerate(node.inner)])
    w, z = _gauss_newton_problem(node, psi_raw, j, np.asarray(R_q, dtype=np.float64), cfg.deriv_floor)
    if not np.any(w > 0):
        return node.inner[j]
    c, _ = solve_spline_ls(data.X[:, j], z, node.inner[j].basis, w, cfg.ridge)
    return node.inner[j].with_coefficients(c)


class _Workspace:
    """Cached design matrices and per-node values for one training run."""

    def __init__(self, model: KanModel, data: Dataset):
        self.X, self.Y = data.X, data.Y
        self._designs: dict = {}
        self.psi = [np.stack([self.design(node.inner[j].basis, j).matvec(node.inner[j].coefficients)
                              for j in range(model.dimension)])
                    for node in model.nodes]
        self.out = np.stack([self.node_output(node, self.psi[q]) for q, node in enumerate(model.nodes)])

    def design(self, knots, j):
        key = (knots.degree, knots.interior_count, j)
        if key not in self._designs:
            self._designs[key] = design_matrix(knots, self.X[:, j])
        return self._designs[key]

    @staticmethod
    def aggregate(node: KanNode, psi_raw: np.ndarray) -> np.ndarray:
        if node.kind is AggregationKind.MULTIPLICATIVE:
            return np.prod(np.clip(psi_raw, -node.output_bound, node.output_bound), axis=0)
        return np.sum(psi_raw, axis=0)

    def node_output(self, node: KanNode, psi_raw: np.ndarray) -> np.ndarray:
        return node.outer(node.normalizer(self.aggregate(node, psi_raw)))


def _check_finite(arr, what: str, q: int, sweep: int):
    if not np.all(np.isfinite(arr)):
        raise TrainingError(f"non-finite {what} in node {q} during sweep {sweep}")


def _joint_outer_refit(nodes: list, ws: _Workspace, total: np.ndarray) -> np.ndarray:
    """Least squares over all outer coefficients at once, inner splines fixed.

    The stacked design is rank deficient (every block contains the constants),
    so singular values below ``JOINT_RCOND`` times the largest are dropped.
    The result is kept only if it does not raise the training MSE.
    """
    blocks, vs = [], []
    for q, node in enumerate(nodes):
        v = node.normalizer(ws.aggregate(node, ws.psi[q]))
        vs.append(v)
        blocks.append(design_matrix(node.outer.basis, v).toarray())
    coef, *_ = lstsq(np.hstack(blocks), ws.Y, cond=JOINT_RCOND, lapack_driver="gelsd")
    if not np.all(np.isfinite(coef)):
        return total
    outs, start = [], 0
    cand = []
    for q, node in enumerate(nodes):
        m = node.outer.basis.dim
        cand.append(replace(node, outer=node.outer.with_coefficients(coef[start: start + m])))
        outs.append(cand[-1].outer(vs[q]))
        start += m
    new_total = np.sum(outs, axis=0)
    if np.mean((ws.Y - new_total) ** 2) > np.mean((ws.Y - total) ** 2):
        return total
    nodes[:] = cand
    ws.out[:] = np.stack(outs)
    return new_total


def fit(model: KanModel, data: Dataset, cfg: TrainConfig | None = None):
    """Backfit ``model`` to ``data``; returns ``(trained_model, FitTrace)``."""
    cfg = TrainConfig() if cfg is None else cfg
    if data.d != model.dimension:
        raise ValueError(f"data has dimension {data.d}, model expects {model.dimension}")
    ws = _Workspace(model, data)
    Y = ws.Y
    nodes = list(model.nodes)
    trace = FitTrace()

    def refresh(q):
        T = ws.aggregate(nodes[q], ws.psi[q])
        nodes[q] = replace(nodes[q], normalizer=Normalizer.fit(T, cfg.normalizer_pad))

    total = ws.out.sum(axis=0)
    prev = float(np.mean((Y - total) ** 2))
    trace.initial_mse = prev
    _check_finite(prev, "training loss", 0, 0)

    for sweep in range(1, cfg.max_sweeps + 1):
        for q in range(len(nodes)):
            R = Y - (total - ws.out[q])
            if not cfg.freeze_normalizers:
                refresh(q)
            node = nodes[q]
            T = ws.aggregate(node, ws.psi[q])
            v = node.normalizer(T)
            if cfg.update_outer:
                c, fell_back = solve_spline_ls(v, R, node.outer.basis, None, cfg.ridge)
                trace.ridge_fallbacks += fell_back
                _check_finite(c, "outer coefficients", q, sweep)
                node = replace(node, outer=node.outer.with_coefficients(c))
            out_q = node.outer(v)
            loss = float(np.mean((R - out_q) ** 2))

            for j in range(model.dimension):
                psi = node.inner[j]
                dm = ws.design(psi.basis, j)
                w, z = _gauss_newton_problem(node, ws.psi[q], j, R, cfg.deriv_floor)
                if not np.any(w > 0):
                    trace.skipped_updates += 1
                    continue
                c_new, fell_back = solve_spline_ls(ws.X[:, j], z, psi.basis, w, cfg.ridge, design=dm)
                trace.ridge_fallbacks += fell_back
                _check_finite(c_new, "inner coefficients", q, sweep)
                step = c_new - psi.coefficients
                for alpha in _STEP_SCHEDULE:
                    c_try = psi.coefficients + alpha * step
                    psi_try = ws.psi[q].copy()
                    psi_try[j] = dm.matvec(c_try)
                    cand = replace(node, inner=node.inner[:j] + (psi.with_coefficients(c_try),)
                                   + node.inner[j + 1:])
                    out_try = ws.node_output(cand, psi_try)
                    loss_try = float(np.mean((R - out_try) ** 2))
                    if loss_try <= loss:
                        node, ws.psi[q], out_q, loss = cand, psi_try, out_try, loss_try
                        break
                    trace.rejected_steps += 1

            nodes[q] = node
            total = total - ws.out[q] + out_q
            ws.out[q] = out_q

        if cfg.joint_outer and cfg.update_outer and len(nodes) > 1:
            total = _joint_outer_refit(nodes, ws, total)

        mse = float(np.mean((Y - total) ** 2))
        _check_finite(mse, "training loss", len(nodes) - 1, sweep)
        trace.mse.append(mse)
        trace.sweeps = sweep
        if mse > prev + 1e-6 * (1.0 + prev):
            trace.monotonicity_violations += 1
            log.debug("sweep %d raised training MSE %.6g -> %.6g", sweep, prev, mse)
        if mse == 0.0 or prev - mse < cfg.tol * prev:
            trace.converged = True
            break
        prev = mse

    return KanModel(model.dimension, tuple(nodes), model.smoothness_hint), trace
