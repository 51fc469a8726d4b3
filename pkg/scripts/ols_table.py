"""Naive versus regression-adjusted estimates with privatized covariates.

    python scripts/ols_table.py --splits 0.1,1,3 --n 1000 --nsim 300
"""

import argparse
import csv
import sys

from ldp_causal.simulation import GridCell, run_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--splits", default="0.1,1,3", help="per-component budget, used for eps_x = eps_y = eps_w")
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--nsim", type=int, default=300)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    cells = []
    for e in (float(s) for s in args.splits.split(",")):
        for est in ("naive", "ols"):
            cells.append(GridCell("joint_with_covariates", est, 3 * e, args.n, args.nsim, eps_split=(e, e, e)))
    rows = run_grid(cells, args.seed, args.workers)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.DictWriter(fh, fieldnames=list(rows[0].as_dict()))
    w.writeheader()
    for r in rows:
        w.writerow(r.as_dict())
    if args.out:
        fh.close()


if __name__ == "__main__":
    main()
