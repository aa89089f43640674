"""Single-hidden-layer KAN: ``f(x) = sum_q g_q(N_q(T_q(x)))``.

``T_q`` is the sum (additive node) or product (multiplicative node) of the
per-coordinate inner splines, ``N_q`` an affine map onto [0, 1] and ``g_q``
the outer spline.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .splines import SplineFunction, build_clamped_knots

FORMAT_VERSION = 1
DEFAULT_BOUND = 10.0


class AggregationKind(str, enum.Enum):
    ADDITIVE = "additive"
    MULTIPLICATIVE = "multiplicative"


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Normalizer:
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.hi > self.lo):
            raise ValueError(f"normalizer needs finite hi > lo, got lo={self.lo}, hi={self.hi}")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def __call__(self, u):
        return np.clip((np.asarray(u, dtype=np.float64) - self.lo) / self.width, 0.0, 1.0)

    @classmethod
    def fit(cls, u, pad: float = 0.05) -> Normalizer:
        """Observed range of ``u`` widened by ``pad`` of its length on each side."""
        u = np.asarray(u, dtype=np.float64)
        lo, hi = float(np.min(u)), float(np.max(u))
        span = hi - lo
        if not span > 1e-12 * max(1.0, abs(lo), abs(hi)):
            half = 0.5 * max(1.0, abs(lo))
            return cls(lo - half, hi + half)
        return cls(lo - pad * span, hi + pad * span)


@dataclass(frozen=True)
class KanNode:
    kind: AggregationKind
    inner: tuple[SplineFunction, ...]
    normalizer: Normalizer
    outer: SplineFunction
    output_bound: float = DEFAULT_BOUND

    def __post_init__(self):
        object.__setattr__(self, "kind", AggregationKind(self.kind))
        object.__setattr__(self, "inner", tuple(self.inner))
        if not self.inner:
            raise ValueError("a node needs at least one inner spline")
        if not self.output_bound > 0:
            raise ValueError("output_bound must be positive")

    @property
    def d(self) -> int:
        return len(self.inner)

    def inner_values(self, X) -> np.ndarray:
        """Inner spline values, shape ``(d, n)``; clamped for multiplicative nodes."""
        X = _as_points(X, self.d)
        vals = np.stack([psi(X[:, j]) for j, psi in enumerate(self.inner)])
        if self.kind is AggregationKind.MULTIPLICATIVE:
            vals = np.clip(vals, -self.output_bound, self.output_bound)
        return vals

    def aggregate(self, vals: np.ndarray) -> np.ndarray:
        if self.kind is AggregationKind.ADDITIVE:
            return np.sum(vals, axis=0)
        return np.prod(vals, axis=0)


@dataclass(frozen=True)
class KanModel:
    dimension: int
    nodes: tuple[KanNode, ...]
    smoothness_hint: int = 2

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if not self.nodes:
            raise ValueError("a model needs at least one node (Q >= 1)")
        for q, node in enumerate(self.nodes):
            if node.d != self.dimension:
                raise ValueError(f"node {q} has {node.d} inner splines, model dimension is {self.dimension}")
        if self.smoothness_hint < 1:
            raise ValueError("smoothness_hint must be >= 1")

    @property
    def Q(self) -> int:
        return len(self.nodes)

    def __call__(self, X):
        return model_forward(self, X)

    def replace_node(self, q: int, node: KanNode) -> KanModel:
        nodes = list(self.nodes)
        nodes[q] = node
        return replace(self, nodes=tuple(nodes))


def _as_points(x, d: int) -> np.ndarray:
    X = np.asarray(x, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"expected points of dimension {d}, got shape {np.shape(x)}")
    if not np.all(np.isfinite(X)) or np.any(X < 0) or np.any(X > 1):
        raise ValueError("inputs must lie in [0, 1]^d")
    return X


def _unwrap(x, out):
    return float(out[0]) if np.ndim(x) == 1 else out


def node_transform(node: KanNode, x):
    return _unwrap(x, node.aggregate(node.inner_values(x)))


def node_forward(node: KanNode, x):
    T = node.aggregate(node.inner_values(x))
    return _unwrap(x, node.outer(node.normalizer(T)))


def model_forward(model: KanModel, x):
    X = _as_points(x, model.dimension)
    out = np.zeros(X.shape[0])
    for node in model.nodes:
        out += node_forward(node, X)
    return _unwrap(x, out)


def ramp_coefficients(knots) -> np.ndarray:
    """Greville abscissae: coefficients reproducing the identity ``x``."""
    t, p = knots.knots, knots.degree
    if p == 0:
        return 0.5 * (t[:-1] + t[1:])
    return np.array([t[i + 1: i + p + 1].mean() for i in range(knots.dim)])


def init_model(d: int, Q: int, kinds, degree: int = 3, interior_count: int = 3,
               seed: int = 0, *, noise: float = 0.01, outer_interior_count: int | None = None,
               smoothness_hint: int = 2, output_bound: float = DEFAULT_BOUND) -> KanModel:
    """Near-identity model.

    Inner splines start as ``x/d`` in additive nodes and ``1 + x/d`` in
    multiplicative ones, plus uniform noise in ``[-noise, noise]`` on every
    coefficient; outer splines are the identity ramp and normalizers map
    [0, 1] onto itself.
    """
    kinds = [AggregationKind(k) for k in kinds]
    if d < 1 or Q < 1 or len(kinds) != Q:
        raise ValueError(f"need d >= 1, Q >= 1 and one kind per node (d={d}, Q={Q}, kinds={len(kinds)})")
    rng = np.random.default_rng(seed)
    inner_knots = build_clamped_knots(interior_count, degree)
    outer_knots = build_clamped_knots(
        interior_count if outer_interior_count is None else outer_interior_count, degree)
    ramp_in = ramp_coefficients(inner_knots)
    nodes = []
    for kind in kinds:
        # product analogue of x/d: 1 + x/d, so T starts near 1 + mean(x)
        offset = 0.0 if kind is AggregationKind.ADDITIVE else 1.0
        inner = []
        for _ in range(d):
            jitter = rng.uniform(-noise, noise, inner_knots.dim) if noise > 0 else 0.0
            inner.append(SplineFunction(inner_knots, offset + ramp_in / d + jitter))
        outer = SplineFunction(outer_knots, ramp_coefficients(outer_knots))
        nodes.append(KanNode(kind, tuple(inner), Normalizer(0.0, 1.0), outer, output_bound))
    return KanModel(d, tuple(nodes), smoothness_hint)


def hybrid_kinds(Q: int) -> list[AggregationKind]:
    """ceil(Q/2) multiplicative nodes followed by floor(Q/2) additive ones."""
    n_mult = (Q + 1) // 2
    return [AggregationKind.MULTIPLICATIVE] * n_mult + [AggregationKind.ADDITIVE] * (Q - n_mult)


def architecture_kinds(arch: str, Q: int) -> list[AggregationKind]:
    if arch == "additive":
        return [AggregationKind.ADDITIVE] * Q
    if arch == "hybrid":
        return hybrid_kinds(Q)
    raise ValueError(f"unknown architecture {arch!r} (expected 'additive' or 'hybrid')")


# --- serialization -------------------------------------------------------

def _spline_dict(f: SplineFunction) -> dict:
    return {"degree": f.degree, "interior_count": f.basis.interior_count,
            "coefficients": [float(c) for c in f.coefficients]}


def model_to_dict(model: KanModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "d": model.dimension,
        "r": model.smoothness_hint,
        "Q": model.Q,
        "nodes": [
            {
                "kind": node.kind.value,
                "M": float(node.output_bound),
                "normalizer": {"lo": float(node.normalizer.lo), "hi": float(node.normalizer.hi)},
                "inner": [_spline_dict(psi) for psi in node.inner],
                "outer": _spline_dict(node.outer),
            }
            for node in model.nodes
        ],
    }


def _emit(obj, indent: int, level: int = 0) -> str:
    # json.dumps cannot be told to write 17 significant digits
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        items = [f"{pad}{json.dumps(k)}: {_emit(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_emit(v, indent) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _emit(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, float):
        if not np.isfinite(obj):
            raise ValueError("cannot serialize non-finite value")
        return f"{obj:.17e}"
    return json.dumps(obj)


def serialize_model(model: KanModel) -> str:
    return _emit(model_to_dict(model), indent=2) + "\n"


def _require(obj: dict, key: str, where: str, kind=None):
    if not isinstance(obj, dict) or key not in obj:
        raise ModelFormatError(f"missing field '{where}{key}'")
    val = obj[key]
    if kind is not None and not isinstance(val, kind):
        raise ModelFormatError(f"field '{where}{key}' has wrong type {type(val).__name__}")
    return val


def _spline_from(obj, where: str) -> SplineFunction:
    degree = _require(obj, "degree", where, int)
    K = _require(obj, "interior_count", where, int)
    coefs = _require(obj, "coefficients", where, list)
    try:
        return SplineFunction(build_clamped_knots(K, degree), np.asarray(coefs, dtype=np.float64))
    except (ValueError, TypeError) as exc:
        raise ModelFormatError(f"field '{where}coefficients': {exc}") from None


def model_from_dict(obj: dict) -> KanModel:
    version = _require(obj, "format_version", "", int)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"field 'format_version': unsupported version {version} "
                               f"(expected {FORMAT_VERSION})")
    d = _require(obj, "d", "", int)
    r = _require(obj, "r", "", int)
    Q = _require(obj, "Q", "", int)
    raw_nodes = _require(obj, "nodes", "", list)
    if Q < 1:
        raise ModelFormatError(f"field 'Q': need at least one node, got {Q}")
    if len(raw_nodes) != Q:
        raise ModelFormatError(f"field 'nodes': Q={Q} but {len(raw_nodes)} nodes listed")
    nodes = []
    for q, raw in enumerate(raw_nodes):
        where = f"nodes[{q}]."
        try:
            kind = AggregationKind(_require(raw, "kind", where, str))
        except ValueError:
            raise ModelFormatError(f"field '{where}kind': unknown kind {raw['kind']!r}") from None
        M = float(_require(raw, "M", where, (int, float)))
        norm = _require(raw, "normalizer", where, dict)
        try:
            normalizer = Normalizer(float(_require(norm, "lo", where + "normalizer.", (int, float))),
                                    float(_require(norm, "hi", where + "normalizer.", (int, float))))
        except ModelFormatError:
            raise
        except ValueError as exc:
            raise ModelFormatError(f"field '{where}normalizer': {exc}") from None
        inner_raw = _require(raw, "inner", where, list)
        if len(inner_raw) != d:
            raise ModelFormatError(f"field '{where}inner': expected {d} splines, got {len(inner_raw)}")
        inner = tuple(_spline_from(s, f"{where}inner[{j}].") for j, s in enumerate(inner_raw))
        outer = _spline_from(_require(raw, "outer", where, dict), where + "outer.")
        try:
            nodes.append(KanNode(kind, inner, normalizer, outer, M))
        except ValueError as exc:
            raise ModelFormatError(f"{where[:-1]}: {exc}") from None
    try:
        return KanModel(d, tuple(nodes), r)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None


def deserialize_model(text: str) -> KanModel:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from None
    if not isinstance(obj, dict):
        raise ModelFormatError("model file must contain a JSON object")
    return model_from_dict(obj)


def save_model(model: KanModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_model(model))


def load_model(path) -> KanModel:
    with open(path) as fh:
        return deserialize_model(fh.read())
