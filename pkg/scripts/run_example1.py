"""Replicate benchmark for the simulated gene-expression design.

Fits a set of samplers on independently generated replicates under one or
more error models and prints the TP/FP/prediction table. The defaults are a
reduced-scale smoke run; pass --full for the reporting protocol
(n=500, p=100, 15000 iterations, 100 replicates), which takes hours.

    python3 scripts/run_example1.py
    python3 scripts/run_example1.py --errors normal laplace-2 t2 --jobs 4
    python3 scripts/run_example1.py --full --out results/example1
"""

import argparse
import dataclasses
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from robust_gxe.evalharness import run_replicates
from robust_gxe.simgen import ERROR_MODELS, SimulationConfig

DEFAULT_METHODS = ("rbsg-ss", "bsg-ss", "rbl-ss", "rbsg", "bsg")


def parse_args(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--methods", nargs="+", default=list(DEFAULT_METHODS))
    ap.add_argument("--errors", nargs="+", default=["normal", "laplace-2"],
                    choices=list(ERROR_MODELS))
    ap.add_argument("--replicates", type=int, default=10)
    ap.add_argument("--iters", type=int, default=3000)
    ap.add_argument("--burnin", type=int, default=1500)
    ap.add_argument("--n", type=int, default=250)
    ap.add_argument("--p", type=int, default=50)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--q", type=int, default=3)
    ap.add_argument("--active-groups", type=int, default=9)
    ap.add_argument("--active-effects", type=int, default=25)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--full", action="store_true",
                    help="reporting protocol: n=500 p=100, 15000 iterations, "
                         "100 replicates")
    ap.add_argument("--out", default=None,
                    help="directory for report_<error>.csv/.json files")
    return ap.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    if args.full:
        args.n, args.p = 500, 100
        args.iters, args.burnin = 15_000, 7_500
        args.replicates = 100
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    base = SimulationConfig(n=args.n, p=args.p, k=args.k, q=args.q,
                            n_active_groups=args.active_groups,
                            n_active_effects=args.active_effects,
                            seed=args.seed)
    for error_model in args.errors:
        sim = dataclasses.replace(base, error_model=error_model)
        report = run_replicates(args.methods, sim, args.replicates,
                                n_iter=args.iters, burn_in=args.burnin,
                                jobs=args.jobs)
        print(f"\n=== error model: {error_model} "
              f"({args.replicates} replicates, n={args.n}, p={args.p}) ===")
        print(report.to_table_frame().to_string())
        if args.out:
            stem = os.path.join(args.out, f"report_{error_model}")
            report.write(csv_path=stem + ".csv", json_path=stem + ".json")
            print(f"written: {stem}.csv {stem}.json")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
