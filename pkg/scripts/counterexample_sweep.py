"""Best eta from the rank-one PSD plant search for a range of Bernoulli parameters."""

import argparse
import csv
import sys

import numpy as np

from trideficit import counterex
from trideficit.dist import centered_bernoulli


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--q-min", type=float, default=0.05)
    ap.add_argument("--q-max", type=float, default=0.95)
    ap.add_argument("--steps", type=int, default=19)
    ap.add_argument("--n-delta", type=int, default=40)
    ap.add_argument("--n-eps", type=int, default=40)
    ap.add_argument("-o", "--output")
    args = ap.parse_args(argv)

    out = open(args.output, "w", newline="") if args.output else sys.stdout
    w = csv.writer(out)
    w.writerow(counterex.SEARCH_CSV_FIELDS)
    for q in np.linspace(args.q_min, args.q_max, args.steps):
        res = counterex.search_eta(centered_bernoulli(float(q)), n_delta=args.n_delta, n_eps=args.n_eps)
        w.writerows(res.csv_rows(best_only=True))
    if out is not sys.stdout:
        out.close()


if __name__ == "__main__":
    main()
