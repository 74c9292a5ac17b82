"""Naive vs tilted lower-tail estimates over a grid of quantile levels.

    python scripts/tail_sweep.py --model gnp --n 30 --levels 1e-2 1e-3 --samples 100000 -o tail.csv
"""

import argparse
import csv
import sys

from trideficit import rare


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", choices=("gnp", "gnm"), default="gnp")
    ap.add_argument("--n", type=int, default=30)
    ap.add_argument("--p", type=float, default=0.5)
    ap.add_argument("--m", type=int, default=218)
    ap.add_argument("--levels", type=float, nargs="+", default=[1e-2, 1e-3])
    ap.add_argument("--samples", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("-o", "--output")
    args = ap.parse_args(argv)

    model = rare.GraphModel.gnp(args.n, args.p) if args.model == "gnp" else rare.GraphModel.gnm(args.n, args.m)
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    w = csv.writer(out)
    w.writerow(["level", "t", "naive_log_prob", "naive_stderr", "tilted_log_prob", "tilted_stderr", "tilted_ess", "z"])
    for i, level in enumerate(args.levels):
        base = args.seed + 10 * i
        t = rare.deficit_quantile(model, level, args.samples, seed=base, workers=args.workers)
        naive = rare.naive_tail_estimate(model, t, args.samples, seed=base + 1, workers=args.workers)
        plant = rare.PlantedConfig.calibrated(model, t)
        tilted = rare.tilted_tail_estimate(model, t, plant, args.samples, seed=base + 2, workers=args.workers)
        se = (naive.stderr**2 + tilted.stderr**2) ** 0.5
        z = (tilted.log_prob - naive.log_prob) / se if se > 0 else float("nan")
        w.writerow([level, t, naive.log_prob, naive.stderr, tilted.log_prob, tilted.stderr, tilted.effective_sample_size, z])
        out.flush()
    if out is not sys.stdout:
        out.close()


if __name__ == "__main__":
    main()
