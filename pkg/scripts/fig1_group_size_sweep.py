"""Power of the F and LR tests in the ridge experiment as the group size varies.

Usage: python scripts/fig1_group_size_sweep.py [--sizes 10,25,40,50,75] [--reps 200] [--seed 0]
"""

import argparse
import dataclasses

from protosel import harness


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="10,25,40,50,75")
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    base = harness.preset("fig1")
    print("p1\tscenario\tmethod\tpower@0.05")
    for p1 in (int(v) for v in args.sizes.split(",")):
        cfg = dataclasses.replace(base, group_sizes=[p1], replications=args.reps,
                                  seed=args.seed, out_dir=None)
        rows, _ = harness.run_experiment(cfg)
        for sc in cfg.scenarios:
            for m in cfg.methods:
                print(f"{p1}\t{sc.label}\t{m}\t{harness.power_from_rows(rows, sc.label, m, 0.05):.3f}")


if __name__ == "__main__":
    main()
