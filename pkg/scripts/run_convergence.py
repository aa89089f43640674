"""Run a convergence study and print the median-MSE table and fitted slopes.

    python3 scripts/run_convergence.py configs/piecewise_poly.ini --out-dir results/poly
"""

import argparse
import time

from kanrate.experiment import load_config, run_experiment, write_report


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--out-dir", default=None)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()

    cfg = load_config(args.config)
    t0 = time.perf_counter()
    report = run_experiment(cfg, workers=args.workers)
    elapsed = time.perf_counter() - t0

    for s in report.summary:
        print(f"{s.arch}: slope {s.slope:+.3f} +/- {s.stderr:.3f} (theory {-2 * cfg.target.r / (2 * cfg.target.r + 1):+.3f})")
        for n, med in s.medians:
            print(f"    n={n:6d}  median test MSE {med:.3e}")
    print(f"{len(report.rows)} cells in {elapsed:.0f}s, {len(report.failures)} failed")
    if args.out_dir:
        paths = write_report(report, args.out_dir)
        print("wrote", ", ".join(str(p) for p in paths.values()))


if __name__ == "__main__":
    main()
