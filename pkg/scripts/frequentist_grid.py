"""Frequentist grid: joint / custom IPW / custom DM at several total budgets.

    python scripts/frequentist_grid.py --nsim 200 --out grid.csv
"""

import argparse
import csv
import sys
import time

from ldp_causal.simulation import run_grid, frequentist_grid_cells


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--eps", default="0.1,0.3,1,3,10", help="comma list of total budgets")
    ap.add_argument("--n", type=int, default=10000)
    ap.add_argument("--nsim", type=int, default=200)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    eps = [float(e) for e in args.eps.split(",")]
    t0 = time.time()
    rows = run_grid(frequentist_grid_cells(eps, args.n, args.nsim), args.seed, args.workers)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.DictWriter(fh, fieldnames=list(rows[0].as_dict()))
    w.writeheader()
    for r in rows:
        w.writerow(r.as_dict())
    if args.out:
        fh.close()
    print(f"{len(rows)} cells in {time.time() - t0:.1f}s", file=sys.stderr)


if __name__ == "__main__":
    main()
