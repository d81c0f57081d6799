#!/usr/bin/env python3
"""Convert a (T, N, C) array from an .npz archive into the long tensor CSV.

    tools/npz_to_csv.py PEMS08.npz pems08.csv [--key data] [--names flow,occupancy,speed]
"""
import argparse
import csv

import numpy as np


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("npz")
    ap.add_argument("out")
    ap.add_argument("--key", default="data")
    ap.add_argument("--names", help="comma-separated attribute names")
    args = ap.parse_args()

    x = np.load(args.npz)[args.key]
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise SystemExit(f"expected a (T, N, C) array, got shape {x.shape}")
    t, n, c = x.shape
    names = args.names.split(",") if args.names else [f"attr{k}" for k in range(c)]
    if len(names) != c:
        raise SystemExit(f"{len(names)} names for {c} attributes")

    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["timestamp", "sensor", *names])
        for ti in range(t):
            for si in range(n):
                w.writerow([ti, si, *(repr(float(v)) for v in x[ti, si])])


if __name__ == "__main__":
    main()
