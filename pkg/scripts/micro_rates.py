#!/usr/bin/env python3
"""Micro convergence of M^H, R^H, G^H(t), J^H(t) on the smooth laminate, written to CSV."""

import argparse

from fehmm import studies


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", default="8,16,32")
    ap.add_argument("--order", type=int, default=1, choices=(1, 2))
    ap.add_argument("--tau", type=float, default=0.05)
    ap.add_argument("--out", default="micro_rates.csv")
    args = ap.parse_args()
    levels = tuple(int(v) for v in args.levels.split(","))
    res = studies.micro_rates(levels, tau=args.tau, order=args.order)
    for r in res.records:
        print(f"{r.label:10s} errors {' '.join(f'{e:.3e}' for e in r.errors)}  slope {r.slope:.2f} "
              f"(expected {r.expected:g}) {r.status}")
    for k, (ok, d) in res.checks.items():
        print(f"{k}: {'ok' if ok else 'FAIL'} {d}")
    res.write_csv(args.out)
    print(f"wrote {args.out} ({res.elapsed:.1f} s)")


if __name__ == "__main__":
    main()
