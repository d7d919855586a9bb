#!/usr/bin/env python3
"""Wall-clock scaling of the exact vs sliced objectives across dimensions.

The exact objective needs D+1 backward passes per minibatch, the sliced one
M+1, so their costs diverge linearly in the data dimension.
"""

import argparse

from slicedscore.harness import run_bench_scaling


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dims", default="50,100,200,400")
    ap.add_argument("--objectives", default="sm,ssm,ssm_vr,dsm")
    ap.add_argument("--projections", type=int, default=1)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    dims = [int(d) for d in args.dims.split(",")]
    objectives = args.objectives.split(",")
    records = run_bench_scaling(dims, objectives, m=args.projections, reps=args.reps, seed=args.seed)

    print(f"{'dim':>6} {'objective':>10} {'ms/minibatch':>14} {'backward passes':>16}")
    for r in records:
        print(f"{r.dimension:>6} {r.objective:>10} {1000 * r.wall_clock_seconds:>14.2f} {r.backward_passes:>16}")

    by_obj = {}
    for r in records:
        by_obj.setdefault(r.objective, {})[r.dimension] = r.wall_clock_seconds
    print("\ntime ratios (largest dim / smallest):")
    for kind, times in by_obj.items():
        print(f"  {kind}: {times[max(times)] / times[min(times)]:.2f}x")


if __name__ == "__main__":
    main()
