"""Command-line interface: ``kanrate {gen,fit,eval,experiment}``.

Exit codes: 0 success, 2 usage or input error, 3 training failure,
4 experiment finished with failed cells.
"""

from __future__ import annotations

import argparse
import sys
import warnings

from . import backfit, experiment
from .model import ModelFormatError, load_model, save_model
from .targets import DatasetFormatError, GenConfig, TargetSpec, generate, read_dataset, write_dataset

EXIT_OK, EXIT_USAGE, EXIT_TRAIN, EXIT_PARTIAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _target_spec(args) -> TargetSpec:
    d = args.d
    if d is None:
        d = 1 if args.target == "fourier" else 5
    try:
        return TargetSpec(args.target, args.r, d, args.truncation)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_gen(args) -> int:
    spec = _target_spec(args)
    try:
        data = generate(spec, GenConfig(args.n, args.sigma, args.seed))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        write_dataset(args.out, data)
    except OSError as exc:
        raise UsageError(f"cannot write {args.out}: {exc}") from None
    print(f"rows={data.n} columns={data.d + 1} out={args.out}")
    return EXIT_OK


def _read_data(path):
    try:
        return read_dataset(path)
    except (OSError, DatasetFormatError) as exc:
        raise UsageError(f"cannot read dataset: {exc}") from None


def cmd_fit(args) -> int:
    data = _read_data(args.data)
    try:
        train = backfit.TrainConfig(max_sweeps=args.max_sweeps, degree=args.degree, seed=args.seed)
        model = experiment.make_model(data.d, data.n, args.arch, args.q, args.r, args.knot_c,
                                      train, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        model, trace = backfit.fit(model, data, train)
    except (backfit.TrainingError, ArithmeticError) as exc:
        print(f"error: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    try:
        save_model(model, args.model_out)
    except OSError as exc:
        raise UsageError(f"cannot write {args.model_out}: {exc}") from None
    print(f"train_mse={backfit.training_mse(model, data)!r} sweeps={trace.sweeps}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        model = load_model(args.model)
    except OSError as exc:
        raise UsageError(f"cannot read model: {exc}") from None
    except ModelFormatError as exc:
        raise UsageError(f"invalid model file {args.model}: {exc}") from None
    if (args.data is None) == (args.target is None):
        raise UsageError("give exactly one of --data or --target")
    if args.data is not None:
        data = _read_data(args.data)
        if data.d != model.dimension:
            raise UsageError(f"dataset has d={data.d}, model expects d={model.dimension}")
        mse = backfit.training_mse(model, data)
    else:
        spec = _target_spec(args)
        if spec.d != model.dimension:
            raise UsageError(f"target has d={spec.d}, model expects d={model.dimension}")
        mse = experiment.estimate_test_mse(model, spec, args.test_points, args.seed)
    print(f"mse={mse!r}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    try:
        cfg = experiment.load_config(args.config)
    except experiment.ConfigError as exc:
        raise UsageError(str(exc)) from None
    workers = cfg.workers if args.workers is None else args.workers
    if workers < 1:
        raise UsageError("--workers must be >= 1")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = experiment.run_experiment(cfg, workers=workers)
    try:
        experiment.write_report(report, args.out_dir)
    except OSError as exc:
        raise UsageError(f"cannot write reports to {args.out_dir}: {exc}") from None
    for s in report.summary:
        print(f"slope[{s.arch}]={s.slope!r}")
    for msg in report.failures:
        print(f"error: {msg}", file=sys.stderr)
    return EXIT_PARTIAL if report.failures else EXIT_OK


def _add_target_flags(p, required: bool):
    p.add_argument("--target", choices=["piecewise-poly", "fourier"], required=required)
    p.add_argument("--r", type=int, default=2)
    p.add_argument("--d", type=int, default=None, help="input dimension (default 5, or 1 for fourier)")
    p.add_argument("--truncation", type=int, default=1000, help="Fourier series terms")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kanrate", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset CSV")
    _add_target_flags(p, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", help="train a KAN by backfitting and save it")
    p.add_argument("--arch", choices=list(experiment.ARCHITECTURES), required=True)
    p.add_argument("--q", type=int, default=4)
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--r", type=int, default=2)
    p.add_argument("--data", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--knot-c", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-sweeps", type=int, default=50)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="mean squared error of a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data")
    _add_target_flags(p, required=False)
    p.add_argument("--test-points", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run a convergence study from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
