#!/usr/bin/env python3
"""Super-resolution benchmark: generate, sweep, report the selected lambda.

Equivalent to
    alasso gen   --config configs/superres_tv.cfg --out <dir>
    alasso sweep --config configs/superres_tv.cfg --out <dir>
followed by a glance at sweep.csv.
"""
import argparse
import logging
from pathlib import Path

from alasso import cmd_gen, cmd_sweep, load_config, with_overrides

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs"
                                            / "superres_tv.cfg"))
    ap.add_argument("--out", default="results/superres")
    ap.add_argument("--seed", type=int, default=None,
                    help="override the config seed (noise and probes)")
    args = ap.parse_args()

    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    config = with_overrides(load_config(args.config), seed=args.seed)
    gen = cmd_gen(config, args.out)
    print(f"input psnr {gen.psnr:.4f} dB at sigma {gen.sigma:.6g}")
    res = cmd_sweep(config, args.out, seed=args.seed)
    best = res.rows[res.selected_index]
    print(f"lambda {best.lam:.6g}: dof {best.dof}, "
          f"gsure_proj {best.gsure_proj:.6g}, se_proj {best.se_proj:.6g}")
    print(f"rows in {res.csv_path}; plot with: python3 "
          f"{Path(args.out) / 'plot_sweep.py'} {res.csv_path}")


if __name__ == "__main__":
    main()
