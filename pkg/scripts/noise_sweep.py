"""Desk-scale noise sweep: one augmented run per sigma against a shared baseline, written as CSV.

    python scripts/noise_sweep.py --sigmas 0,0.5,1,1.5 --out sweep.csv
"""

import argparse
import csv
import sys

from dsqa.config import desk_preset
from dsqa.experiments import SWEEP_FIELDS, noise_sweep


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sigmas", default="0,0.5,1,1.5")
    ap.add_argument("--post-steps", type=int, default=5000)
    ap.add_argument("--baseline-nll", type=float)
    ap.add_argument("--out", default="-")
    args = ap.parse_args()

    cfg = desk_preset()
    cfg.total_steps = cfg.compressor.pretrain_steps + args.post_steps
    sigmas = [float(s) for s in args.sigmas.split(",")]

    fh = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    writer = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
    writer.writeheader()

    def flush(row):
        writer.writerow(row.csv_row())
        fh.flush()

    noise_sweep(cfg, sigmas, ln_p=args.baseline_nll, callback=flush)
    if fh is not sys.stdout:
        fh.close()


if __name__ == "__main__":
    main()
