#!/usr/bin/env python3
"""Run the acceptance criteria outside pytest and print one line per criterion.

    python3 scripts/run_acceptance.py            # all eleven
    python3 scripts/run_acceptance.py 1 8 11     # a subset
"""

import argparse
import sys

from fehmm.acceptance import CRITERIA, evaluate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("numbers", nargs="*", type=int, help="criterion numbers (default: all)")
    args = ap.parse_args()
    chosen = [c for c in CRITERIA if not args.numbers or c.number in args.numbers]
    outcomes = []
    for c in chosen:
        outcomes.append(evaluate(c))
        print(outcomes[-1].line(), flush=True)
    n_ok = sum(o.ok for o in outcomes)
    print(f"{n_ok}/{len(outcomes)} criteria passed in {sum(o.elapsed for o in outcomes):.1f} s")
    return 0 if n_ok == len(outcomes) else 1


if __name__ == "__main__":
    sys.exit(main())
