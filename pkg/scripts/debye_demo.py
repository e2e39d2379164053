#!/usr/bin/env python3
"""Debye scenario end to end: effective tensors, a pulsed run and the stability margin over time."""

import argparse
from pathlib import Path

import numpy as np

from fehmm.config import load_config
from fehmm.studies import stability_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(Path(__file__).resolve().parents[1] / "configs" / "debye.ini"))
    ap.add_argument("--out", default="debye_norms.csv")
    args = ap.parse_args()
    cfg = load_config(args.config)
    res = stability_study(cfg)
    sc, traj = res.data["scenario"], res.data["trajectory"]
    t = sc.table
    print(f"{t.n_unique} micro problems, n = {t.n}, alpha {t.meta['alpha']:.4g}, C_M {t.meta['C_M']:.4g}")
    print(f"|G^H(0)| {np.abs(t.G[:, 0]).max():.4g}, |J^H(0)| {np.abs(t.J[:, 0]).max():.4g}")
    rep = traj.report
    for m in np.linspace(0, len(rep.times) - 1, 6).astype(int):
        print(f"t = {rep.times[m]:5.2f}  norm {rep.norms[m]:.5f}  bound {rep.bounds[m]:.5f}")
    traj.write_csv(args.out)
    print(res.summary())


if __name__ == "__main__":
    main()
