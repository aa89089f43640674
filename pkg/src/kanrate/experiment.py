"""Convergence studies: train over a sample-size grid, estimate the L2 risk by
Monte Carlo, and fit log-log slopes of the median test MSE."""

from __future__ import annotations

import configparser
import csv
import hashlib
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .backfit import TrainConfig, TrainingError, fit
from .model import architecture_kinds, init_model
from .splines import knot_count_rule
from .targets import GenConfig, TargetSpec, generate

ARCHITECTURES = ("additive", "hybrid")
DEFAULT_N_GRID = (100, 200, 400, 800, 1600, 3200, 6400, 12800)
ROW_FIELDS = ("arch", "n", "seed", "train_mse", "test_mse", "sweeps", "wall_ms")
SUMMARY_FIELDS = ("arch", "slope", "stderr", "intercept", "n_points")


class ConfigError(ValueError):
    pass


class CellError(RuntimeError):
    def __init__(self, arch: str, n: int, rep: int, cause: BaseException):
        super().__init__(f"cell (arch={arch}, n={n}, rep={rep}) failed: {cause}")
        self.arch, self.n, self.rep = arch, n, rep


@dataclass(frozen=True)
class ExperimentConfig:
    target: TargetSpec = field(default_factory=TargetSpec)
    sigma: float = 0.05
    architectures: tuple[str, ...] = ARCHITECTURES
    n_grid: tuple[int, ...] = DEFAULT_N_GRID
    replications: int = 10
    base_seed: int = 0
    test_points: int = 20000
    Q: int = 4
    degree: int = 3
    knot_c: float = 1.0
    train: TrainConfig = field(default_factory=TrainConfig)
    workers: int = 1
    record_wall_time: bool = True

    def __post_init__(self):
        object.__setattr__(self, "architectures", tuple(self.architectures))
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        if not self.architectures:
            raise ConfigError("at least one architecture is required")
        for arch in self.architectures:
            if arch not in ARCHITECTURES:
                raise ConfigError(f"unknown architecture {arch!r}")
        if len(set(self.architectures)) != len(self.architectures):
            raise ConfigError("architectures must not repeat")
        if not self.n_grid or any(n < 1 for n in self.n_grid):
            raise ConfigError("n_grid must be a non-empty list of positive sizes")
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ConfigError("n_grid must be strictly increasing")
        if self.replications < 1 or self.test_points < 1 or self.Q < 1 or self.workers < 1:
            raise ConfigError("replications, test_points, Q and workers must be >= 1")
        if not self.knot_c > 0 or self.sigma < 0:
            raise ConfigError("knot_c must be > 0 and sigma >= 0")


@dataclass(frozen=True)
class CellResult:
    arch: str
    n: int
    seed: int
    train_mse: float
    test_mse: float
    sweeps: int
    wall_ms: int
    rep: int = -1


@dataclass(frozen=True)
class ArchSummary:
    arch: str
    slope: float
    stderr: float
    intercept: float
    n_points: int
    medians: tuple[tuple[int, float], ...] = ()


@dataclass
class ConvergenceReport:
    rows: list[CellResult]
    summary: list[ArchSummary]
    failures: list[str] = field(default_factory=list)


def derive_seed(base_seed: int, *parts) -> int:
    """Stable 63-bit seed from the base seed and a cell identity."""
    digest = hashlib.blake2b("|".join(map(str, parts)).encode(), digest_size=8).digest()
    return (int(base_seed) ^ int.from_bytes(digest, "little")) & (2**63 - 1)


def estimate_test_mse(model, spec: TargetSpec, m: int, seed: int) -> float:
    """Monte Carlo estimate of ``||model - f||^2`` over ``m`` fresh uniform points."""
    if m < 1:
        raise ValueError("need at least one test point")
    X = np.random.default_rng(seed).random((m, spec.d))
    diff = np.asarray(model(X), dtype=np.float64) - spec(X)
    return float(np.mean(diff * diff))


def fit_loglog_slope(points):
    """OLS of ``log(mse)`` on ``log(n)``; returns ``(slope, intercept, stderr)``."""
    pts = [(float(n), float(v)) for n, v in points]
    if len(pts) < 3:
        raise ValueError("need at least 3 points to fit a slope")
    if any(n <= 0 or not v > 0 for n, v in pts):
        raise ValueError("sample sizes and MSE values must be positive")
    x = np.log([n for n, _ in pts])
    y = np.log([v for _, v in pts])
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0:
        raise ValueError("need at least two distinct sample sizes")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    stderr = float(math.sqrt(np.sum(resid ** 2) / (len(pts) - 2) / sxx))
    return slope, intercept, stderr


def make_model(d: int, n: int, arch: str, Q: int, r: int, knot_c: float, train: TrainConfig, seed: int):
    """Fresh model sized for ``n`` samples by the knot rule (unless overridden)."""
    default_k = knot_count_rule(n, r, knot_c)
    k_in = default_k if train.inner_knot_count is None else train.inner_knot_count
    k_out = default_k if train.outer_knot_count is None else train.outer_knot_count
    return init_model(d, Q, architecture_kinds(arch, Q), train.degree, k_in, seed,
                      outer_interior_count=k_out, smoothness_hint=r)


def cell_seeds(cfg: ExperimentConfig, arch: str, n: int, rep: int):
    # data and test seeds ignore the architecture so that every architecture
    # sees the same samples
    return (derive_seed(cfg.base_seed, "data", n, rep),
            derive_seed(cfg.base_seed, "init", arch, n, rep),
            derive_seed(cfg.base_seed, "test", n, rep))


def run_cell(cfg: ExperimentConfig, arch: str, n: int, rep: int) -> CellResult:
    data_seed, init_seed, test_seed = cell_seeds(cfg, arch, n, rep)
    t0 = time.perf_counter()
    try:
        data = generate(cfg.target, GenConfig(n, cfg.sigma, data_seed))
        model = make_model(cfg.target.d, n, arch, cfg.Q, cfg.target.r, cfg.knot_c, cfg.train, init_seed)
        model, trace = fit(model, data, cfg.train)
        test = estimate_test_mse(model, cfg.target, cfg.test_points, test_seed)
    except (TrainingError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise CellError(arch, n, rep, exc) from exc
    wall = int(round(1000 * (time.perf_counter() - t0))) if cfg.record_wall_time else 0
    return CellResult(arch, n, data_seed, trace.mse[-1], test, trace.sweeps, wall, rep)


def _run_cell_safe(args):
    cfg, arch, n, rep = args
    try:
        return run_cell(cfg, arch, n, rep)
    except CellError as exc:
        return exc


def _arch_order(arch: str):
    return (ARCHITECTURES.index(arch) if arch in ARCHITECTURES else len(ARCHITECTURES), arch)


def _cell_key(row: CellResult):
    return (_arch_order(row.arch), row.n, row.rep, row.seed)


def summarize(rows) -> list[ArchSummary]:
    """Median test MSE per ``(arch, n)`` and the log-log slope through the medians."""
    out = []
    archs = sorted({r.arch for r in rows}, key=_arch_order)
    for arch in archs:
        by_n: dict[int, list[float]] = {}
        for r in rows:
            if r.arch == arch:
                by_n.setdefault(r.n, []).append(r.test_mse)
        medians = tuple((n, float(np.median(v))) for n, v in sorted(by_n.items()))
        if len(medians) >= 3:
            slope, intercept, stderr = fit_loglog_slope(medians)
        else:
            slope = intercept = stderr = float("nan")
        out.append(ArchSummary(arch, slope, stderr, intercept, len(medians), medians))
    return out


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ConvergenceReport:
    workers = cfg.workers if workers is None else workers
    jobs = [(cfg, arch, n, rep) for arch in cfg.architectures for n in cfg.n_grid
            for rep in range(cfg.replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell_safe, jobs, chunksize=1))
    else:
        results = [_run_cell_safe(job) for job in jobs]
    rows = sorted((r for r in results if isinstance(r, CellResult)), key=_cell_key)
    failures = [str(r) for r in results if isinstance(r, CellError)]
    if failures:
        warnings.warn(f"{len(failures)} of {len(jobs)} cells failed; summary uses completed cells only")
    return ConvergenceReport(rows, summarize(rows), failures)


# --- reports -----------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.17g}"
    return str(v)


def write_report(report: ConvergenceReport, out_dir) -> dict[str, Path]:
    """Write ``rows.csv``, ``summary.csv`` and the plot-ready ``medians.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"rows": out_dir / "rows.csv", "summary": out_dir / "summary.csv",
             "medians": out_dir / "medians.csv"}
    with paths["rows"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in report.rows:
            w.writerow([_fmt(getattr(r, k)) for k in ROW_FIELDS])
    with paths["summary"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for s in report.summary:
            w.writerow([_fmt(getattr(s, k)) for k in SUMMARY_FIELDS])
    with paths["medians"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("arch", "n", "median_test_mse", "log10_n", "log10_median_mse"))
        for s in report.summary:
            for n, med in s.medians:
                w.writerow([s.arch, n, _fmt(med), _fmt(math.log10(n)),
                            _fmt(math.log10(med)) if med > 0 else "nan"])
    return paths


def read_rows(path) -> list[CellResult]:
    rows = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ROW_FIELDS:
            raise ValueError(f"{path}: expected header {','.join(ROW_FIELDS)}")
        for rec in reader:
            rows.append(CellResult(rec["arch"], int(rec["n"]), int(rec["seed"]),
                                   float(rec["train_mse"]), float(rec["test_mse"]),
                                   int(rec["sweeps"]), int(rec["wall_ms"])))
    return rows


def read_summary(path) -> list[ArchSummary]:
    with Path(path).open(newline="") as fh:
        return [ArchSummary(rec["arch"], float(rec["slope"]), float(rec["stderr"]),
                            float(rec["intercept"]), int(rec["n_points"]))
                for rec in csv.DictReader(fh)]


# --- config files ------------------------------------------------------------

_BOOL = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


def _int_list(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.replace(",", " ").split())


def _optional_int(s: str):
    return None if s.strip().lower() in ("", "none", "auto") else int(s)


def _bool(s: str) -> bool:
    try:
        return _BOOL[s.strip().lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {s!r}") from None


_TARGET_KEYS = {"kind": str, "r": int, "d": int, "fourier_truncation": int, "sigma": float}
_TRAIN_KEYS = {"max_sweeps": int, "tol": float, "ridge": float, "deriv_floor": float,
               "inner_knot_count": _optional_int, "outer_knot_count": _optional_int,
               "degree": int, "seed": int, "normalizer_pad": float, "freeze_normalizers": _bool,
               "update_outer": _bool, "joint_outer": _bool}
assert set(_TRAIN_KEYS) == {f.name for f in fields(TrainConfig)}
_EXPERIMENT_KEYS = {
    "architectures": lambda s: tuple(a.strip() for a in s.replace(",", " ").split()),
    "n_grid": _int_list, "replications": int, "base_seed": int, "test_points": int,
    "q": int, "degree": int, "knot_c": float, "workers": int, "record_wall_time": _bool,
}


def _section(parser, name: str, schema: dict) -> dict:
    if not parser.has_section(name):
        return {}
    out = {}
    for key, raw in parser.items(name):
        if key not in schema:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        try:
            out[key] = schema[key](raw)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from None
    return out


def parse_config(text: str) -> ExperimentConfig:
    """Parse the ``[target] [train] [experiment]`` key = value format."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    extra = set(parser.sections()) - {"target", "train", "experiment"}
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(extra))}")
    tgt = _section(parser, "target", _TARGET_KEYS)
    trn = _section(parser, "train", _TRAIN_KEYS)
    exp = _section(parser, "experiment", _EXPERIMENT_KEYS)
    try:
        sigma = tgt.pop("sigma", 0.05)
        target = TargetSpec(**tgt)
        if "degree" in exp:
            trn.setdefault("degree", exp["degree"])
        train = TrainConfig(**trn)
        kw = {k: v for k, v in exp.items() if k not in ("q", "degree")}
        return ExperimentConfig(target=target, sigma=sigma, train=train, degree=train.degree,
                                Q=exp.get("q", 4), **kw)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def format_config(cfg: ExperimentConfig) -> str:
    t = cfg.target
    tr = asdict(cfg.train)
    lines = ["[target]", f"kind = {t.kind.value}", f"r = {t.r}", f"d = {t.d}",
             f"fourier_truncation = {t.fourier_truncation}", f"sigma = {cfg.sigma!r}", "", "[train]"]
    lines += [f"{k} = {'auto' if v is None else str(v).lower() if isinstance(v, bool) else v}"
              for k, v in tr.items()]
    lines += ["", "[experiment]", f"architectures = {', '.join(cfg.architectures)}",
              f"n_grid = {', '.join(map(str, cfg.n_grid))}", f"replications = {cfg.replications}",
              f"base_seed = {cfg.base_seed}", f"test_points = {cfg.test_points}", f"q = {cfg.Q}",
              f"knot_c = {cfg.knot_c!r}", f"workers = {cfg.workers}",
              f"record_wall_time = {str(cfg.record_wall_time).lower()}", ""]
    return "\n".join(lines)
