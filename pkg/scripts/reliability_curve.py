#!/usr/bin/env python3
"""Measure how fast GSURE concentrates on the true risk as Q grows.

Monte Carlo estimate of E[((GSURE - SE) / (Q sigma^2))^2] on a 1-D TV
denoising family at several sizes, with the fitted log-log slope.  The
estimator is reliable when the slope is about -1.
"""
import argparse

import numpy as np

from alasso import identity, finite_diff_1d
from alasso.risk import reliability_mc


def family(q):
    # step signal denoised with 1-D total variation
    x0 = np.zeros(q)
    x0[q // 2:] = 1.0
    return identity(q), finite_diff_1d(q), x0


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+",
                    default=[32, 64, 128, 256])
    ap.add_argument("--trials", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rep = reliability_mc(family, lam_rule=0.1, sigma=0.1,
                         sizes=args.sizes, trials=args.trials,
                         seed=args.seed)
    for q, m, s in zip(rep.sizes, rep.means, rep.stderrs):
        print(f"Q={q:5d}  E[((G-SE)/(Q s^2))^2] = {m:.3e} +- {s:.1e}")
    print(f"log-log slope: {rep.slope:.3f} (O(1/Q) decay is -1)")


if __name__ == "__main__":
    main()
