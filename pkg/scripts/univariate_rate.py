"""Direct spline least squares on a univariate target: median test MSE and slope.

    python3 scripts/univariate_rate.py --target piecewise-poly
    python3 scripts/univariate_rate.py --target fourier

Also prints the noise-free approximation error at each knot count, which
separates the bias floor from the sampling error.
"""

import argparse

import numpy as np

from kanrate.experiment import DEFAULT_N_GRID, fit_loglog_slope
from kanrate.splines import build_clamped_knots, eval_spline, fit_spline_ls, knot_count_rule
from kanrate.targets import GenConfig, TargetSpec, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--target", choices=["piecewise-poly", "fourier"], default="piecewise-poly")
    ap.add_argument("--r", type=int, default=2)
    ap.add_argument("--sigma", type=float, default=0.05)
    ap.add_argument("--reps", type=int, default=10)
    args = ap.parse_args()

    spec = TargetSpec(args.target, args.r, 1)
    test_x = np.random.default_rng(77).random((20000, 1))
    truth = spec(test_x)
    dense = np.linspace(0, 1, 200_001)[:, None]
    medians = []
    for n in DEFAULT_N_GRID:
        kv = build_clamped_knots(knot_count_rule(n, args.r), 3)
        errs = []
        for rep in range(args.reps):
            data = generate(spec, GenConfig(n, args.sigma, 1000 * n + rep))
            f = fit_spline_ls(data.X[:, 0], data.Y, kv)
            errs.append(np.mean((eval_spline(f, test_x[:, 0]) - truth) ** 2))
        best = fit_spline_ls(dense[:, 0], spec(dense), kv)
        bias = np.mean((eval_spline(best, test_x[:, 0]) - truth) ** 2)
        med = float(np.median(errs))
        medians.append((n, med))
        print(f"n={n:6d}  K={kv.interior_count:2d}  median MSE {med:.3e}  noise-free {bias:.3e}")
    slope, _, stderr = fit_loglog_slope(medians)
    print(f"slope {slope:+.3f} +/- {stderr:.3f}")


if __name__ == "__main__":
    main()
